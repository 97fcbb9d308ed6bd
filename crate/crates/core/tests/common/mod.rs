//! Brute-force oracles and fixtures shared by the integration suites.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semocc::fusion::ScatterProjector;
use semocc::geometry::{CameraCalibration, GridSpec};
use semocc::labels::{LabelGrid, FREE, IGNORE};
use semocc_tensor::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::uniform(shape, 1.0, rng)
}

/// `F[c,h,w,z] = xz[c,h,z] yzz[c,w,z] + xy[c,h,w] yzy[c,w,z]`, one cell at a time.
pub fn cross_plane(xz: &Tensor, xy: &Tensor, yzy: &Tensor, yzz: &Tensor) -> Vec<f64> {
    let (c, h, z) = (xz.shape()[0], xz.shape()[1], xz.shape()[2]);
    let w = xy.shape()[2];
    let mut out = Vec::with_capacity(c * h * w * z);
    for ci in 0..c {
        for i in 0..h {
            for j in 0..w {
                for k in 0..z {
                    out.push(xz.at(&[ci, i, k]) * yzz.at(&[ci, j, k]) + xy.at(&[ci, i, j]) * yzy.at(&[ci, j, k]));
                }
            }
        }
    }
    out
}

/// Step-by-step recurrence over `[L, C]` rows.
pub fn scan(x: &Tensor, a: &Tensor, b: &Tensor, c: &Tensor) -> Vec<f64> {
    let (len, ch) = (x.shape()[0], x.shape()[1]);
    let mut out = vec![0.0; len * ch];
    for k in 0..ch {
        let mut h = 0.0;
        for t in 0..len {
            h = a.at(&[t, k]) * h + b.at(&[t, k]) * x.at(&[t, k]);
            out[t * ch + k] = c.at(&[t, k]) * h;
        }
    }
    out
}

/// Per-voxel accumulation loop, optionally weighted by `1 / (1 + depth)`.
pub fn scatter(features: &Tensor, projector: &ScatterProjector, weighted: bool) -> Vec<f64> {
    let c = features.shape()[0];
    let n: usize = projector.dims.iter().product();
    let pixels = projector.height * projector.width;
    let mut out = vec![0.0; c * pixels];
    for ci in 0..c {
        for v in 0..n {
            if let Some((p, depth)) = projector.targets[v] {
                let f = features.data()[ci * n + v];
                out[ci * pixels + p] += if weighted { f * (1.0 / (1.0 + depth)) } else { f };
            }
        }
    }
    out
}

/// Projector with random routing, about a quarter of voxels invisible.
pub fn random_projector(rng: &mut ChaCha8Rng, dims: [usize; 3], height: usize, width: usize) -> ScatterProjector {
    let n: usize = dims.iter().product();
    let targets = (0..n)
        .map(|_| (rng.gen_range(0..4) > 0).then(|| (rng.gen_range(0..height * width), rng.gen_range(0.1..30.0))))
        .collect();
    ScatterProjector {
        dims,
        height,
        width,
        targets,
    }
}

/// `(iou, miou, per-class)` counted directly from the two label arrays.
pub fn evaluate(pred: &[u16], truth: &[u16], classes: usize) -> (f64, f64, Vec<Option<f64>>) {
    let pairs: Vec<(u16, u16)> = pred.iter().zip(truth).filter(|(_, &t)| t != IGNORE).map(|(&p, &t)| (p, t)).collect();
    let ratio = |tp: usize, fp: usize, fnn: usize| tp as f64 / (tp + fp + fnn) as f64;
    let per_class: Vec<Option<f64>> = (0..classes as u16)
        .map(|c| {
            let tp = pairs.iter().filter(|&&(p, t)| p == c && t == c).count();
            let fp = pairs.iter().filter(|&&(p, t)| p == c && t != c).count();
            let fnn = pairs.iter().filter(|&&(p, t)| p != c && t == c).count();
            (tp + fp + fnn > 0).then(|| ratio(tp, fp, fnn))
        })
        .collect();
    let tp = pairs.iter().filter(|&&(p, t)| p != FREE && t != FREE).count();
    let fp = pairs.iter().filter(|&&(p, t)| p != FREE && t == FREE).count();
    let fnn = pairs.iter().filter(|&&(p, t)| p == FREE && t != FREE).count();
    let iou = if tp + fp + fnn == 0 { 1.0 } else { ratio(tp, fp, fnn) };
    let present: Vec<f64> = per_class[1..].iter().flatten().copied().collect();
    let miou = if present.is_empty() {
        1.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    (iou, miou, per_class)
}

/// Random labels in `0..classes`, with some `IGNORE` in the truth.
pub fn random_labels(rng: &mut ChaCha8Rng, dims: [usize; 3], classes: usize, ignore: bool) -> LabelGrid {
    let n: usize = dims.iter().product();
    let data = (0..n)
        .map(|_| {
            if ignore && rng.gen_range(0..10) == 0 {
                IGNORE
            } else {
                rng.gen_range(0..classes as u16)
            }
        })
        .collect();
    LabelGrid::from_vec(dims, data).unwrap()
}

/// The 3-bit reflected Gray code sequence.
pub fn gray3() -> Vec<[usize; 3]> {
    (0..8usize)
        .map(|i| {
            let g = i ^ (i >> 1);
            [(g >> 2) & 1, (g >> 1) & 1, g & 1]
        })
        .collect()
}

pub fn unflat(c: usize, dims: [usize; 3]) -> [usize; 3] {
    [c / (dims[1] * dims[2]), (c / dims[2]) % dims[1], c % dims[2]]
}

pub fn l1(a: [usize; 3], b: [usize; 3]) -> usize {
    (0..3).map(|i| a[i].abs_diff(b[i])).sum()
}

/// Camera somewhere behind and above a grid, looking roughly along +x.
pub fn random_calibration(rng: &mut ChaCha8Rng, height: usize, width: usize) -> CameraCalibration {
    let pos = [rng.gen_range(-3.0..0.5), rng.gen_range(-1.0..1.0), rng.gen_range(-0.5..1.5)];
    let pitch = rng.gen_range(-0.3..0.4);
    let focal = rng.gen_range(0.4..1.2) * width as f64;
    CameraCalibration::looking_forward(pos, pitch, focal, height, width).unwrap()
}

/// Camera-frame coordinates and pixel by a hand pinhole formula.
pub fn pinhole(calib: &CameraCalibration, p: [f64; 3]) -> Option<usize> {
    let t = calib.t();
    let k = calib.k();
    let cam: Vec<f64> = (0..3).map(|a| t[a][0] * p[0] + t[a][1] * p[1] + t[a][2] * p[2] + t[a][3]).collect();
    if cam[2] <= 0.0 {
        return None;
    }
    let u = k[0][0] * cam[0] / cam[2] + k[0][1] * cam[1] / cam[2] + k[0][2];
    let v = k[1][1] * cam[1] / cam[2] + k[1][2];
    let (w, h) = (calib.width() as f64, calib.height() as f64);
    if !(0.0..w).contains(&u) || !(0.0..h).contains(&v) {
        return None;
    }
    Some(v.floor() as usize * calib.width() + u.floor() as usize)
}

pub fn small_grid(dims: [usize; 3]) -> GridSpec {
    GridSpec::new(dims, [0.5, -(dims[1] as f64) * 0.25, -1.0], 0.5).unwrap()
}
