mod common;

use semocc::fusion::{DualBlock, DualMambaStack, HilbertOrder, ScanBranch};
use semocc::geometric::{axis_self_attention, AxisAttention};
use semocc::nn::Linear;
use semocc_tensor::{Graph, ParamStore, Tensor};

use common::*;

fn zero(store: &mut ParamStore, l: &Linear) {
    store.get_mut(l.weight).data_mut().fill(0.0);
}

#[test]
fn zero_value_attention_is_exact_identity() {
    let mut r = rng(21);
    let mut store = ParamStore::new();
    let ay = AxisAttention::new(&mut store, "ay", 3, &mut r);
    let az = AxisAttention::new(&mut store, "az", 3, &mut r);
    zero(&mut store, &ay.value);
    zero(&mut store, &az.value);
    let plane = rand_tensor(&mut r, &[3, 5, 4]);
    let mut g = Graph::new();
    let p = g.constant(&plane);
    let (yzy, yzz) = axis_self_attention(&mut g, &store, &ay, &az, p).unwrap();
    assert_eq!(g.value(yzy), plane.data());
    assert_eq!(g.value(yzz), plane.data());
}

#[test]
fn attention_output_is_input_plus_update_bitwise() {
    let mut r = rng(22);
    let mut store = ParamStore::new();
    let att = AxisAttention::new(&mut store, "att", 4, &mut r);
    let plane = rand_tensor(&mut r, &[4, 6, 3]);
    for along_y in [true, false] {
        let mut g = Graph::new();
        let p = g.constant(&plane);
        let out = att.forward(&mut g, &store, p, along_y).unwrap();
        let upd = att.update(&mut g, &store, p, along_y).unwrap();
        let expect: Vec<f64> = plane.data().iter().zip(g.value(upd)).map(|(a, b)| a + b).collect();
        assert_eq!(g.value(out), expect.as_slice());
        assert!(g.value(upd).iter().any(|v| *v != 0.0));
    }
}

#[test]
fn attention_mixes_only_along_its_axis() {
    let mut r = rng(23);
    let mut store = ParamStore::new();
    let att = AxisAttention::new(&mut store, "att", 2, &mut r);
    let plane = rand_tensor(&mut r, &[2, 4, 3]);
    let mut bumped = plane.clone();
    let off = bumped.offset(&[0, 1, 2]);
    bumped.data_mut()[off] += 1.0;
    let run = |t: &Tensor, along_y| {
        let mut g = Graph::new();
        let p = g.constant(t);
        let out = att.forward(&mut g, &store, p, along_y).unwrap();
        g.value(out).to_vec()
    };
    // Along y the column z = 2 changes; other columns stay.
    let (a, b) = (run(&plane, true), run(&bumped, true));
    for c in 0..2 {
        for w in 0..4 {
            for z in 0..2 {
                let i = (c * 4 + w) * 3 + z;
                assert_eq!(a[i], b[i]);
            }
        }
    }
    // Along z the row w = 1 changes; other rows stay.
    let (a, b) = (run(&plane, false), run(&bumped, false));
    for c in 0..2 {
        for w in [0, 2, 3] {
            for z in 0..3 {
                let i = (c * 4 + w) * 3 + z;
                assert_eq!(a[i], b[i]);
            }
        }
    }
}

fn block(rho: f64, channels: usize, dims: [usize; 3], seed: u64) -> (ParamStore, DualBlock) {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let b = DualBlock::new(&mut store, "blk", channels, rho, dims, dims, &mut r);
    (store, b)
}

fn run_block(store: &ParamStore, b: &DualBlock, fs: &Tensor, fg: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let mut g = Graph::new();
    let (s, gg) = (g.constant(fs), g.constant(fg));
    let (a, c) = b.forward(&mut g, store, s, gg).unwrap();
    (g.value(a).to_vec(), g.value(c).to_vec())
}

#[test]
fn rho_zero_block_with_silent_scans_is_exact_identity() {
    let (mut store, b) = block(0.0, 4, [2, 3, 2], 24);
    zero(&mut store, &b.semantic.output);
    zero(&mut store, &b.geometric.output);
    let mut r = rng(25);
    let fs = rand_tensor(&mut r, &[4, 2, 3, 2]);
    let fg = rand_tensor(&mut r, &[4, 2, 3, 2]);
    let (a, c) = run_block(&store, &b, &fs, &fg);
    assert_eq!(a, fs.data());
    assert_eq!(c, fg.data());
}

#[test]
fn rho_one_scans_the_other_branch() {
    let (store, b) = block(1.0, 3, [2, 2, 2], 26);
    assert_eq!(b.exchanged, 3);
    let mut r = rng(27);
    let fs1 = rand_tensor(&mut r, &[3, 2, 2, 2]);
    let fs2 = rand_tensor(&mut r, &[3, 2, 2, 2]);
    let fg = rand_tensor(&mut r, &[3, 2, 2, 2]);
    let (a1, _) = run_block(&store, &b, &fs1, &fg);
    let (a2, _) = run_block(&store, &b, &fs2, &fg);
    for i in 0..a1.len() {
        let u1 = a1[i] - fs1.data()[i];
        let u2 = a2[i] - fs2.data()[i];
        assert!((u1 - u2).abs() < 1e-12);
    }
}

fn lin(store: &ParamStore, l: &Linear, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let w = store.get(l.weight);
    let len = x[0].len();
    (0..l.outputs)
        .map(|o| {
            (0..len)
                .map(|t| {
                    let s: f64 = (0..l.inputs).map(|i| w.at(&[o, i]) * x[i][t]).sum();
                    s + l.bias.map_or(0.0, |b| store.get(b).data()[o])
                })
                .collect()
        })
        .collect()
}

fn branch(store: &ParamStore, br: &ScanBranch, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (c, len) = (x.len(), x[0].len());
    let norm: Vec<Vec<f64>> = {
        let rms: Vec<f64> = (0..len).map(|t| ((0..c).map(|k| x[k][t] * x[k][t]).sum::<f64>() / c as f64 + 1e-6).sqrt()).collect();
        x.iter().map(|row| row.iter().zip(&rms).map(|(v, r)| v / r).collect()).collect()
    };
    let a = lin(store, &br.decay, &norm);
    let b = lin(store, &br.input, &norm);
    let cc = lin(store, &br.readout, &norm);
    let mut y = vec![vec![0.0; len]; c];
    for k in 0..c {
        let mut h = 0.0;
        for t in 0..len {
            let at = 1.0 / (1.0 + (-a[k][t]).exp());
            h = at * h + b[k][t] * norm[k][t];
            y[k][t] = cc[k][t] * h;
        }
    }
    lin(store, &br.output, &y)
}

#[test]
fn two_cube_block_matches_straight_line_reference() {
    let dims = [2, 2, 2];
    let (store, b) = block(0.5, 4, dims, 28);
    let mut r = rng(29);
    let fs = rand_tensor(&mut r, &[4, 2, 2, 2]);
    let fg = rand_tensor(&mut r, &[4, 2, 2, 2]);
    let order = HilbertOrder::new(dims).cells;
    let seq = |t: &Tensor, pos: &Tensor| -> Vec<Vec<f64>> {
        (0..4).map(|c| order.iter().enumerate().map(|(l, &v)| t.data()[c * 8 + v] + pos.at(&[c, l])).collect()).collect()
    };
    let ss = seq(&fs, store.get(b.pos_semantic));
    let sg = seq(&fg, store.get(b.pos_geometric));
    let mut xs = ss.clone();
    let mut xg = sg.clone();
    for c in 0..2 {
        xs[c] = sg[c].clone();
        xg[c] = ss[c].clone();
    }
    let ys = branch(&store, &b.semantic, &xs);
    let yg = branch(&store, &b.geometric, &xg);
    let restore = |x: &Tensor, y: &[Vec<f64>]| -> Vec<f64> {
        let mut out = x.data().to_vec();
        for c in 0..4 {
            for (l, &v) in order.iter().enumerate() {
                out[c * 8 + v] += y[c][l];
            }
        }
        out
    };
    let (a, c) = run_block(&store, &b, &fs, &fg);
    for (got, want) in [(a, restore(&fs, &ys)), (c, restore(&fg, &yg))] {
        for (x, y) in got.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }
}

fn stack(rho: f64, real: [usize; 3]) -> (ParamStore, DualMambaStack) {
    let mut r = rng(30);
    let mut store = ParamStore::new();
    let s = DualMambaStack::new(&mut store, "st", 3, rho, real, semocc::fusion::padded_dims(real), &mut r).unwrap();
    (store, s)
}

#[test]
fn stack_keeps_dims_and_ignores_padding_content() {
    let real = [5, 4, 3];
    let (store, s) = stack(0.5, real);
    assert_eq!(s.padded, [16, 16, 16]);
    let mut r = rng(31);
    let fs = rand_tensor(&mut r, &[3, 5, 4, 3]);
    let fg = rand_tensor(&mut r, &[3, 5, 4, 3]);
    let mut g = Graph::new();
    let (a, b) = (g.constant(&fs), g.constant(&fg));
    let out = s.forward(&mut g, &store, a, b).unwrap();
    assert_eq!(g.shape(out), &[3, 5, 4, 3]);
    let cropped = g.value(out).to_vec();
    // Same real content, noise in the padding.
    let noisy = |t: &Tensor, r: &mut rand_chacha::ChaCha8Rng| {
        let mut p = rand_tensor(r, &[3, 16, 16, 16]);
        for c in 0..3 {
            for i in 0..5 {
                for j in 0..4 {
                    for k in 0..3 {
                        let o = p.offset(&[c, i, j, k]);
                        p.data_mut()[o] = t.at(&[c, i, j, k]);
                    }
                }
            }
        }
        p
    };
    let (ps, pg) = (noisy(&fs, &mut r), noisy(&fg, &mut r));
    let mut g = Graph::new();
    let (a, b) = (g.constant(&ps), g.constant(&pg));
    let out = s.forward_padded(&mut g, &store, a, b).unwrap();
    let out = semocc::fusion::mamba::crop(&mut g, out, real).unwrap();
    assert_eq!(g.value(out), cropped.as_slice());
}

#[test]
fn stack_rejects_bad_padding() {
    let mut r = rng(32);
    let mut store = ParamStore::new();
    let err = DualMambaStack::new(&mut store, "st", 2, 0.5, [5, 4, 3], [8, 16, 16], &mut r).unwrap_err();
    assert!(err.to_string().contains("16"), "{err}");
}

#[test]
fn gradient_reaches_both_branches() {
    let (store, s) = stack(0.5, [4, 4, 2]);
    let mut r = rng(33);
    let mut g = Graph::new();
    let fs = g.leaf(&rand_tensor(&mut r, &[3, 4, 4, 2]).with_grad());
    let fg = g.leaf(&rand_tensor(&mut r, &[3, 4, 4, 2]).with_grad());
    let out = s.forward(&mut g, &store, fs, fg).unwrap();
    let l = g.sum(out);
    let grads = g.backward(l).unwrap();
    for v in [fs, fg] {
        assert!(grads.get(v).unwrap().iter().any(|x| x.abs() > 1e-12));
    }
}

#[test]
fn zero_geometric_input_with_rho_zero_depends_only_on_semantics() {
    let (store, s) = stack(0.0, [4, 4, 2]);
    let mut r = rng(34);
    let fs = rand_tensor(&mut r, &[3, 4, 4, 2]);
    let run = |fs: &Tensor| {
        let mut g = Graph::new();
        let a = g.constant(fs);
        let b = g.constant(&Tensor::zeros(&[3, 4, 4, 2]));
        let out = s.forward(&mut g, &store, a, b).unwrap();
        g.value(out).to_vec()
    };
    assert_eq!(run(&fs), run(&fs));
    assert_ne!(run(&fs), run(&Tensor::zeros(&[3, 4, 4, 2])));
}
