//! 3D Hilbert curve ordering of grid cells.

/// Cells of a `[H, W, Z]` grid in Hilbert order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HilbertOrder {
    pub dims: [usize; 3],
    /// Sequence position to flat cell index.
    pub cells: Vec<usize>,
    /// Flat cell index to sequence position.
    pub positions: Vec<usize>,
}

/// Coordinates of curve index `h` on a `2^bits` cube (Skilling's transpose form).
pub fn hilbert_point(h: u64, bits: u32) -> [u32; 3] {
    let mut x = [0u32; 3];
    for j in 0..bits {
        for (i, xi) in x.iter_mut().enumerate() {
            let bit = (h >> (3 * bits - 1 - (3 * j + i as u32))) & 1;
            *xi |= (bit as u32) << (bits - 1 - j);
        }
    }
    if bits == 0 {
        return x;
    }
    let n = 2u32 << (bits - 1);
    let t = x[2] >> 1;
    for i in (1..3).rev() {
        x[i] ^= x[i - 1];
    }
    x[0] ^= t;
    let mut q = 2;
    while q != n {
        let p = q - 1;
        for i in (0..3).rev() {
            if x[i] & q != 0 {
                x[0] ^= p;
            } else {
                let t = (x[0] ^ x[i]) & p;
                x[0] ^= t;
                x[i] ^= t;
            }
        }
        q <<= 1;
    }
    x
}

impl HilbertOrder {
    /// Walks the curve of the smallest enclosing power-of-two cube and keeps real cells.
    pub fn new(dims: [usize; 3]) -> Self {
        let side = dims.iter().copied().max().unwrap_or(1).next_power_of_two();
        let bits = side.trailing_zeros();
        let total = dims.iter().product::<usize>();
        let mut cells = Vec::with_capacity(total);
        for h in 0..(side * side * side) as u64 {
            let [i, j, k] = hilbert_point(h, bits).map(|v| v as usize);
            if i < dims[0] && j < dims[1] && k < dims[2] {
                cells.push((i * dims[1] + j) * dims[2] + k);
            }
        }
        let mut positions = vec![0; total];
        for (pos, &c) in cells.iter().enumerate() {
            positions[c] = pos;
        }
        Self {
            dims,
            cells,
            positions,
        }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Same order with cells re-indexed into a larger enclosing grid.
    pub fn embedded_in(&self, outer: [usize; 3]) -> Vec<usize> {
        let [_, w, z] = self.dims;
        self.cells
            .iter()
            .map(|&c| {
                let (i, j, k) = (c / (w * z), (c / z) % w, c % z);
                (i * outer[1] + j) * outer[2] + k
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_cube_is_identity() {
        let h = HilbertOrder::new([1, 1, 1]);
        assert_eq!(h.cells, vec![0]);
    }

    #[test]
    fn two_cube_walk_is_adjacent() {
        let h = HilbertOrder::new([2, 2, 2]);
        let mut seen = h.cells.clone();
        seen.sort();
        assert_eq!(seen, (0..8).collect::<Vec<_>>());
        for w in h.cells.windows(2) {
            let a = [w[0] / 4, (w[0] / 2) % 2, w[0] % 2];
            let b = [w[1] / 4, (w[1] / 2) % 2, w[1] % 2];
            let d: usize = (0..3).map(|i| a[i].abs_diff(b[i])).sum();
            assert_eq!(d, 1);
        }
    }
}
