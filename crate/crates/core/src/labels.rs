//! Dense class-ID containers for voxel grids and images.

/// Class ID excluded from every loss and metric.
pub const IGNORE: u16 = u16::MAX;

/// Class 0 of every taxonomy: empty space.
pub const FREE: u16 = 0;

/// `H x W x Z` class IDs, row-major with `z` fastest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelGrid {
    dims: [usize; 3],
    data: Vec<u16>,
}

impl LabelGrid {
    pub fn filled(dims: [usize; 3], value: u16) -> Self {
        Self {
            dims,
            data: vec![value; dims.iter().product()],
        }
    }

    pub fn from_vec(dims: [usize; 3], data: Vec<u16>) -> Option<Self> {
        (data.len() == dims.iter().product::<usize>()).then_some(Self { dims, data })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> u16 {
        self.data[self.index(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, v: u16) {
        let idx = self.index(i, j, k);
        self.data[idx] = v;
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u16] {
        &mut self.data
    }

    /// Binary occupancy: 1 where the class is neither free nor ignored.
    pub fn occupancy(&self) -> LabelGrid {
        let data = self
            .data
            .iter()
            .map(|&c| match c {
                IGNORE => IGNORE,
                FREE => 0,
                _ => 1,
            })
            .collect();
        LabelGrid {
            dims: self.dims,
            data,
        }
    }
}

/// `h x w` class IDs, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    data: Vec<u16>,
}

impl LabelMap {
    pub fn filled(height: usize, width: usize, value: u16) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<u16>) -> Option<Self> {
        (data.len() == height * width).then_some(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: u16) {
        self.data[row * self.width + col] = v;
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u16] {
        &mut self.data
    }

    /// Majority vote over `stride x stride` blocks, ignoring `IGNORE`.
    /// Ties go to the smaller class ID. Blocks with no labelled pixel are ignored.
    pub fn downsample_majority(&self, stride: usize) -> LabelMap {
        let (h, w) = (self.height.div_ceil(stride), self.width.div_ceil(stride));
        let mut out = LabelMap::filled(h, w, IGNORE);
        let mut counts: Vec<(u16, usize)> = Vec::new();
        for r in 0..h {
            for c in 0..w {
                counts.clear();
                for y in r * stride..((r + 1) * stride).min(self.height) {
                    for x in c * stride..((c + 1) * stride).min(self.width) {
                        let v = self.get(y, x);
                        if v == IGNORE {
                            continue;
                        }
                        match counts.iter_mut().find(|(k, _)| *k == v) {
                            Some((_, n)) => *n += 1,
                            None => counts.push((v, 1)),
                        }
                    }
                }
                if let Some(&(best, _)) = counts
                    .iter()
                    .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
                {
                    out.set(r, c, best);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn occupancy_keeps_ignore() {
        let g = LabelGrid::from_vec([1, 1, 4], vec![0, 3, IGNORE, 1]).unwrap();
        assert_eq!(g.occupancy().data(), &[0, 1, IGNORE, 1]);
    }

    #[test]
    fn majority_downsample() {
        let m = LabelMap::from_vec(2, 4, vec![1, 1, 2, IGNORE, 1, 3, IGNORE, IGNORE]).unwrap();
        let d = m.downsample_majority(2);
        assert_eq!(d.data(), &[1, 2]);
        let all_ignored = LabelMap::filled(2, 2, IGNORE).downsample_majority(2);
        assert_eq!(all_ignored.data(), &[IGNORE]);
    }
}
