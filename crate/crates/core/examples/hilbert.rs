//! Hilbert ordering of a small grid, and how much locality it keeps compared
//! with row-major order.

use semocc::fusion::HilbertOrder;

fn jumps(order: &[usize], dims: [usize; 3]) -> (f64, usize) {
    let at = |c: usize| [c / (dims[1] * dims[2]), (c / dims[2]) % dims[1], c % dims[2]];
    let steps: Vec<usize> = order
        .windows(2)
        .map(|w| {
            let (a, b) = (at(w[0]), at(w[1]));
            (0..3).map(|i| a[i].abs_diff(b[i])).sum()
        })
        .collect();
    (steps.iter().sum::<usize>() as f64 / steps.len() as f64, *steps.iter().max().unwrap())
}

fn main() {
    let cube = HilbertOrder::new([2, 2, 2]);
    println!("2x2x2 walk (flat cells): {:?}", cube.cells);

    for dims in [[8, 8, 8], [32, 32, 8], [5, 7, 3]] {
        let h = HilbertOrder::new(dims);
        let row_major: Vec<usize> = (0..h.len()).collect();
        let (hm, hx) = jumps(&h.cells, dims);
        let (rm, rx) = jumps(&row_major, dims);
        println!("{dims:?}: hilbert mean step {hm:.2} (max {hx}), row-major {rm:.2} (max {rx})");
    }
}
