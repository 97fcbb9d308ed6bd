mod common;

use rand::Rng;
use semocc::fusion::{scatter_project, HilbertOrder, ProjectionMode};
use semocc::geometric::cross_plane_synergy;
use semocc::metrics::evaluate;
use semocc_tensor::Graph;

use common::*;

#[test]
fn cross_plane_matches_cell_loop() {
    let mut r = rng(1);
    for trial in 0..40 {
        let small = trial < 20;
        let dim = |r: &mut rand_chacha::ChaCha8Rng| if small { r.gen_range(1..=4) } else { r.gen_range(1..=9) };
        let (c, h, w, z) = (dim(&mut r), dim(&mut r), dim(&mut r), dim(&mut r));
        let xz = rand_tensor(&mut r, &[c, h, z]);
        let xy = rand_tensor(&mut r, &[c, h, w]);
        let yzy = rand_tensor(&mut r, &[c, w, z]);
        let yzz = rand_tensor(&mut r, &[c, w, z]);
        let mut g = Graph::new();
        let v = [&xz, &xy, &yzy, &yzz].map(|t| g.constant(t));
        let f = cross_plane_synergy(&mut g, v[0], v[1], v[2], v[3]).unwrap();
        assert_eq!(g.shape(f), &[c, h, w, z]);
        assert_eq!(g.value(f), cross_plane(&xz, &xy, &yzy, &yzz).as_slice());
    }
}

#[test]
fn cross_plane_rejects_mismatched_planes() {
    let mut r = rng(2);
    let mut g = Graph::new();
    let xz = g.constant(&rand_tensor(&mut r, &[2, 3, 4]));
    let xy = g.constant(&rand_tensor(&mut r, &[2, 3, 5]));
    let yz = g.constant(&rand_tensor(&mut r, &[2, 6, 4]));
    assert!(cross_plane_synergy(&mut g, xz, xy, yz, yz).is_err());
}

#[test]
fn selective_scan_matches_recurrence() {
    let mut r = rng(3);
    for len in 1..=16 {
        let ch = r.gen_range(1..4);
        let x = rand_tensor(&mut r, &[len, ch]);
        let a = rand_tensor(&mut r, &[len, ch]);
        let b = rand_tensor(&mut r, &[len, ch]);
        let c = rand_tensor(&mut r, &[len, ch]);
        let mut g = Graph::new();
        let v = [&x, &a, &b, &c].map(|t| g.constant(t));
        let y = g.selective_scan(v[0], v[1], v[2], v[3]).unwrap();
        assert_eq!(g.value(y), scan(&x, &a, &b, &c).as_slice());
    }
}

#[test]
fn two_voxels_onto_one_pixel_sum() {
    let p = semocc::fusion::ScatterProjector {
        dims: [1, 1, 2],
        height: 1,
        width: 1,
        targets: vec![Some((0, 1.0)), Some((0, 3.0))],
    };
    let mut g = Graph::new();
    let f = g.constant_from(&[1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
    let y = scatter_project(&mut g, f, &p, ProjectionMode::Plain).unwrap();
    assert_eq!(g.value(y), &[3.0]);
    let y = scatter_project(&mut g, f, &p, ProjectionMode::DistanceWeighted).unwrap();
    assert_eq!(g.value(y), &[1.0 / 2.0 + 2.0 / 4.0]);
}

#[test]
fn scatter_matches_accumulation_loop() {
    let mut r = rng(4);
    for trial in 0..30 {
        let dims = if trial == 0 { [4, 4, 2] } else { [r.gen_range(1..6), r.gen_range(1..6), r.gen_range(1..5)] };
        let c = r.gen_range(1..4);
        let (h, w) = (r.gen_range(1..5), r.gen_range(1..5));
        let p = random_projector(&mut r, dims, h, w);
        let f = rand_tensor(&mut r, &[c, dims[0], dims[1], dims[2]]);
        for (mode, weighted) in [(ProjectionMode::Plain, false), (ProjectionMode::DistanceWeighted, true)] {
            let mut g = Graph::new();
            let v = g.constant(&f);
            let y = scatter_project(&mut g, v, &p, mode).unwrap();
            assert_eq!(g.shape(y), &[c, p.height, p.width]);
            assert_eq!(g.value(y), scatter(&f, &p, weighted).as_slice());
        }
    }
}

#[test]
fn evaluate_matches_direct_counts() {
    let mut r = rng(5);
    for trial in 0..30 {
        let side = if trial < 10 { r.gen_range(1..=4) } else { r.gen_range(4..=16) };
        let dims = [side, r.gen_range(1..=side), r.gen_range(1..=side)];
        let classes = r.gen_range(2..6);
        let pred = random_labels(&mut r, dims, classes, false);
        let truth = random_labels(&mut r, dims, classes, true);
        let s = evaluate(&pred, &truth, classes).unwrap();
        let (iou, miou, per_class) = common::evaluate(pred.data(), truth.data(), classes);
        assert_eq!((s.iou, s.miou), (iou, miou));
        assert_eq!(s.per_class, per_class);
    }
}

#[test]
fn miou_ignores_joint_permutation() {
    let mut r = rng(6);
    let dims = [6, 5, 4];
    let pred = random_labels(&mut r, dims, 4, false);
    let truth = random_labels(&mut r, dims, 4, true);
    let mut idx: Vec<usize> = (0..pred.len()).collect();
    for i in (1..idx.len()).rev() {
        idx.swap(i, r.gen_range(0..=i));
    }
    let shuffle = |l: &semocc::labels::LabelGrid| {
        semocc::labels::LabelGrid::from_vec(dims, idx.iter().map(|&i| l.data()[i]).collect()).unwrap()
    };
    let a = evaluate(&pred, &truth, 4).unwrap();
    let b = evaluate(&shuffle(&pred), &shuffle(&truth), 4).unwrap();
    assert_eq!(a, b);
}

#[test]
fn hilbert_two_cube_is_a_gray_code_walk() {
    let h = HilbertOrder::new([2, 2, 2]);
    let walk: Vec<[usize; 3]> = h.cells.iter().map(|&c| unflat(c, [2, 2, 2])).collect();
    let gray = gray3();
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let matches = perms.iter().any(|p| {
        (0..8).all(|i| (0..3).all(|a| walk[i][a] == gray[i][p[a]]))
    });
    assert!(matches, "{walk:?}");
}

#[test]
fn hilbert_is_bijective_up_to_eight_cubed() {
    for a in 1..=8 {
        for b in 1..=8 {
            for c in 1..=8 {
                let h = HilbertOrder::new([a, b, c]);
                let n = a * b * c;
                let mut seen = vec![false; n];
                for &cell in &h.cells {
                    assert!(!seen[cell]);
                    seen[cell] = true;
                }
                assert_eq!(h.len(), n);
                for (pos, &cell) in h.cells.iter().enumerate() {
                    assert_eq!(h.positions[cell], pos);
                }
            }
        }
    }
}

#[test]
fn hilbert_non_cubes_filter_the_padded_curve() {
    let mut r = rng(7);
    let mut cases = vec![[3, 2, 2]];
    cases.extend((0..20).map(|_| [r.gen_range(1..=32), r.gen_range(1..=32), r.gen_range(1..=32)]));
    for dims in cases {
        let side = dims.iter().copied().max().unwrap_or(1usize).next_power_of_two();
        let cube = HilbertOrder::new([side; 3]);
        let filtered: Vec<usize> = cube
            .cells
            .iter()
            .map(|&c| unflat(c, [side; 3]))
            .filter(|p| (0..3).all(|a| p[a] < dims[a]))
            .map(|p| (p[0] * dims[1] + p[1]) * dims[2] + p[2])
            .collect();
        assert_eq!(HilbertOrder::new(dims).cells, filtered, "{dims:?}");
    }
}

#[test]
fn hilbert_steps_are_unit_on_power_of_two_cubes() {
    for side in [1, 2, 4, 8, 16] {
        let h = HilbertOrder::new([side; 3]);
        for w in h.cells.windows(2) {
            assert_eq!(l1(unflat(w[0], [side; 3]), unflat(w[1], [side; 3])), 1);
        }
    }
}

#[test]
fn hilbert_visits_aligned_octants_contiguously() {
    let side = 8;
    let h = HilbertOrder::new([side; 3]);
    for block in [2, 4] {
        let per = block * block * block;
        for chunk in h.cells.chunks(per) {
            let first = unflat(chunk[0], [side; 3]).map(|v| v / block);
            assert!(chunk.iter().all(|&c| unflat(c, [side; 3]).map(|v| v / block) == first));
        }
    }
}
