//! Weighted cross-entropy, soft Dice, and the composite occupancy loss.

use semocc_tensor::{Graph, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{dims_err, Result};
use crate::labels::IGNORE;

/// `w_c = 1 / ln(1.02 + f_c)` from per-class counts, rescaled to mean 1.
pub fn class_weights(counts: &[u64]) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    let raw: Vec<f64> = counts
        .iter()
        .map(|&n| {
            let f = if total == 0 { 0.0 } else { n as f64 / total as f64 };
            1.0 / (1.02 + f).ln()
        })
        .collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    raw.into_iter().map(|w| w / mean).collect()
}

/// Per-class label counts, skipping `IGNORE`.
pub fn label_counts(labels: impl IntoIterator<Item = u16>, classes: usize) -> Vec<u64> {
    let mut counts = vec![0; classes];
    for l in labels {
        if l != IGNORE {
            counts[l as usize] += 1;
        }
    }
    counts
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OccTerm {
    CrossEntropy,
    Dice,
}

pub const DEFAULT_OCC_TERMS: [OccTerm; 2] = [OccTerm::CrossEntropy, OccTerm::Dice];

/// Logits `[M, ...]` restricted to supervised positions: `[M, n]` plus their labels.
struct Selected {
    logits: Var,
    labels: Vec<u16>,
}

fn select(g: &mut Graph, logits: Var, labels: &[u16], mask: Option<&[bool]>) -> Result<Option<Selected>> {
    let shape = g.shape(logits).to_vec();
    let m = shape[0];
    let n: usize = shape[1..].iter().product();
    if labels.len() != n || mask.is_some_and(|k| k.len() != n) {
        return Err(dims_err("supervision length", n, (labels.len(), mask.map(<[bool]>::len))));
    }
    let mut idx = Vec::new();
    let mut kept = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        if l == IGNORE || mask.is_some_and(|k| !k[i]) {
            continue;
        }
        if l as usize >= m {
            return Err(dims_err("class id", format!("< {m}"), l));
        }
        idx.push(i);
        kept.push(l);
    }
    if idx.is_empty() {
        return Ok(None);
    }
    let flat = g.reshape(logits, &[m, n])?;
    let logits = if idx.len() == n { flat } else { g.gather(flat, 1, &idx)? };
    Ok(Some(Selected { logits, labels: kept }))
}

fn zero(g: &mut Graph) -> Var {
    g.constant(&Tensor::scalar(0.0))
}

fn ce_selected(g: &mut Graph, s: &Selected, weights: &[f64]) -> Result<Var> {
    let m = g.shape(s.logits)[0];
    let n = s.labels.len();
    let total: f64 = s.labels.iter().map(|&l| weights[l as usize]).sum();
    let mut target = vec![0.0; m * n];
    for (i, &l) in s.labels.iter().enumerate() {
        target[l as usize * n + i] = weights[l as usize] / total;
    }
    let target = g.constant_from(&[m, n], target)?;
    let logp = g.log_softmax(s.logits, 0)?;
    let picked = g.mul(logp, target)?;
    let sum = g.sum(picked);
    Ok(g.scale(sum, -1.0))
}

fn dice_selected(g: &mut Graph, s: &Selected) -> Result<Var> {
    let m = g.shape(s.logits)[0];
    let n = s.labels.len();
    let mut onehot = vec![0.0; m * n];
    let mut tsum = vec![0.0; m];
    for (i, &l) in s.labels.iter().enumerate() {
        onehot[l as usize * n + i] = 1.0;
        tsum[l as usize] += 1.0;
    }
    let onehot = g.constant_from(&[m, n], onehot)?;
    let p = g.softmax(s.logits, 0)?;
    let pt = g.mul(p, onehot)?;
    let inter = g.sum_axis(pt, 1)?;
    let num = g.scale(inter, 2.0);
    let num = g.add_scalar(num, 1.0);
    let psum = g.sum_axis(p, 1)?;
    let tsum = g.constant_from(&[m], tsum)?;
    let den = g.add(psum, tsum)?;
    let den = g.add_scalar(den, 1.0);
    let ratio = g.div(num, den)?;
    let mean = g.mean(ratio);
    let neg = g.scale(mean, -1.0);
    Ok(g.add_scalar(neg, 1.0))
}

/// Class-weighted mean cross-entropy of `[M, ...]` logits; `IGNORE` labels are skipped.
pub fn weighted_ce(g: &mut Graph, logits: Var, labels: &[u16], weights: &[f64]) -> Result<Var> {
    match select(g, logits, labels, None)? {
        Some(s) => ce_selected(g, &s, weights),
        None => Ok(zero(g)),
    }
}

/// `1 - mean_c (2 sum p t + 1) / (sum p + sum t + 1)` over supervised positions.
pub fn soft_dice(g: &mut Graph, logits: Var, labels: &[u16]) -> Result<Var> {
    match select(g, logits, labels, None)? {
        Some(s) => dice_selected(g, &s),
        None => Ok(zero(g)),
    }
}

/// Occupancy loss over positions where `mask` holds and the label is not `IGNORE`.
pub fn occupancy_loss(
    g: &mut Graph,
    logits: Var,
    labels: &[u16],
    mask: Option<&[bool]>,
    weights: &[f64],
    terms: &[OccTerm],
) -> Result<Var> {
    let Some(s) = select(g, logits, labels, mask)? else {
        return Ok(zero(g));
    };
    let mut total: Option<Var> = None;
    for term in terms {
        let v = match term {
            OccTerm::CrossEntropy => ce_selected(g, &s, weights)?,
            OccTerm::Dice => dice_selected(g, &s)?,
        };
        total = Some(match total {
            Some(t) => g.add(t, v)?,
            None => v,
        });
    }
    Ok(total.unwrap_or_else(|| zero(g)))
}

/// Two-class weighted cross-entropy on geometry logits `[2, H, W, Z]`.
/// Targets of the fused loss. A `None` label set drops its term.
pub struct FusionTargets<'a> {
    pub voxel_labels: Option<&'a [u16]>,
    pub voxel_weights: &'a [f64],
    pub pixel_labels: Option<&'a [u16]>,
    pub pixel_weights: &'a [f64],
    pub terms: &'a [OccTerm],
}

/// Occupancy loss on the voxel logits plus cross-entropy on the projected ones.
pub fn fusion_loss(g: &mut Graph, voxel_logits: Var, pixel_logits: Var, t: &FusionTargets) -> Result<Var> {
    let occ = match t.voxel_labels {
        Some(labels) => occupancy_loss(g, voxel_logits, labels, None, t.voxel_weights, t.terms)?,
        None => zero(g),
    };
    let Some(pixels) = t.pixel_labels else {
        return Ok(occ);
    };
    let ce = weighted_ce(g, pixel_logits, pixels, t.pixel_weights)?;
    if t.voxel_labels.is_none() {
        return Ok(ce);
    }
    Ok(g.add(occ, ce)?)
}

pub fn geometry_loss(g: &mut Graph, logits: Var, labels: &[u16], weights: &[f64]) -> Result<Var> {
    weighted_ce(g, logits, labels, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logits(g: &mut Graph, shape: &[usize], data: &[f64]) -> Var {
        g.leaf(&Tensor::new(shape.to_vec(), data.to_vec()).unwrap().with_grad())
    }

    #[test]
    fn weights_favour_rare_classes() {
        let w = class_weights(&[90, 9, 1]);
        assert!(w[2] > w[1] && w[1] > w[0]);
        assert!((w.iter().sum::<f64>() / 3.0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hand_two_pixel_ce() {
        let mut g = Graph::new();
        let x = logits(&mut g, &[2, 2], &[1.0, 0.0, 0.0, 2.0]);
        let w = [1.0, 3.0];
        let l = weighted_ce(&mut g, x, &[0, 1], &w).unwrap();
        let nll0 = -(1f64.exp() / (1f64.exp() + 1.0)).ln();
        let nll1 = -(2f64.exp() / (2f64.exp() + 1.0)).ln();
        let want = (1.0 * nll0 + 3.0 * nll1) / 4.0;
        assert!((g.scalar_value(l) - want).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions_and_empty_masks_give_zero() {
        let mut g = Graph::new();
        let x = logits(&mut g, &[3, 2], &[40.0, -40.0, -40.0, 40.0, -40.0, -40.0]);
        let l = occupancy_loss(&mut g, x, &[0, 1], None, &[1.0; 3], &DEFAULT_OCC_TERMS).unwrap();
        assert!(g.scalar_value(l).abs() < 1e-9);
        let e = occupancy_loss(&mut g, x, &[0, 1], Some(&[false, false]), &[1.0; 3], &DEFAULT_OCC_TERMS).unwrap();
        assert_eq!(g.scalar_value(e), 0.0);
        let i = geometry_loss(&mut g, x, &[IGNORE, IGNORE], &[1.0; 3]).unwrap();
        assert_eq!(g.scalar_value(i), 0.0);
    }

    #[test]
    fn hand_two_voxel_occupancy() {
        let mut g = Graph::new();
        let x = logits(&mut g, &[2, 2], &[0.0, 0.0, 0.0, 1.0]);
        let l = occupancy_loss(&mut g, x, &[0, 1], None, &[1.0, 1.0], &DEFAULT_OCC_TERMS).unwrap();
        let q = 1f64.exp() / (1.0 + 1f64.exp());
        let ce = (-(0.5f64).ln() - q.ln()) / 2.0;
        // Class 0: p = (0.5, 1 - q), t = (1, 0); class 1: p = (0.5, q), t = (0, 1).
        let d0 = (2.0 * 0.5 + 1.0) / (0.5 + (1.0 - q) + 1.0 + 1.0);
        let d1 = (2.0 * q + 1.0) / (0.5 + q + 1.0 + 1.0);
        let dice = 1.0 - (d0 + d1) / 2.0;
        assert!((g.scalar_value(l) - (ce + dice)).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_label_rejected() {
        let mut g = Graph::new();
        let x = logits(&mut g, &[2, 1], &[0.0, 0.0]);
        assert!(weighted_ce(&mut g, x, &[5], &[1.0, 1.0]).is_err());
    }
}
