//! Confusion matrices, IoU and mIoU.

use crate::error::{dims_err, Result};
use crate::labels::{LabelGrid, FREE, IGNORE};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    /// Row = ground truth, column = prediction.
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    /// Positions whose ground truth is `IGNORE` are skipped.
    pub fn add(&mut self, pred: &[u16], truth: &[u16]) -> Result<()> {
        if pred.len() != truth.len() {
            return Err(dims_err("prediction length", truth.len(), pred.len()));
        }
        for (&p, &t) in pred.iter().zip(truth) {
            if t == IGNORE {
                continue;
            }
            if p as usize >= self.classes || t as usize >= self.classes {
                return Err(dims_err("class id", format!("< {}", self.classes), p.max(t)));
            }
            self.counts[t as usize * self.classes + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
    }

    /// `tp / (tp + fp + fn)` per class, `None` when the class is absent from
    /// both ground truth and prediction.
    pub fn class_iou(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|c| {
                let tp = self.get(c, c);
                let row: u64 = (0..self.classes).map(|p| self.get(c, p)).sum();
                let col: u64 = (0..self.classes).map(|t| self.get(t, c)).sum();
                let union = row + col - tp;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect()
    }

    /// Occupied-vs-free IoU, all non-free classes counting as occupied.
    pub fn occupancy_iou(&self) -> f64 {
        let (mut tp, mut fp, mut fnn) = (0, 0, 0);
        for t in 0..self.classes {
            for p in 0..self.classes {
                let n = self.get(t, p);
                match (t != FREE as usize, p != FREE as usize) {
                    (true, true) => tp += n,
                    (false, true) => fp += n,
                    (true, false) => fnn += n,
                    (false, false) => {}
                }
            }
        }
        let union = tp + fp + fnn;
        if union == 0 {
            1.0
        } else {
            tp as f64 / union as f64
        }
    }

    /// Mean IoU over the non-free classes present in ground truth or prediction.
    pub fn mean_iou(&self) -> f64 {
        let present: Vec<f64> = self.class_iou().into_iter().skip(1).flatten().collect();
        if present.is_empty() {
            1.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        }
    }

    pub fn scores(&self) -> Scores {
        Scores {
            iou: self.occupancy_iou(),
            miou: self.mean_iou(),
            per_class: self.class_iou(),
        }
    }
}

/// Fractions in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Scores {
    pub iou: f64,
    pub miou: f64,
    pub per_class: Vec<Option<f64>>,
}

pub fn evaluate(pred: &LabelGrid, truth: &LabelGrid, classes: usize) -> Result<Scores> {
    if pred.dims() != truth.dims() {
        return Err(dims_err("prediction grid", truth.dims(), pred.dims()));
    }
    let mut cm = ConfusionMatrix::new(classes);
    cm.add(pred.data(), truth.data())?;
    Ok(cm.scores())
}

/// Frames `round(k / fraction)` below `frames`.
pub fn interval_sample(frames: usize, fraction: f64) -> Vec<usize> {
    assert!(fraction > 0.0 && fraction <= 1.0, "label fraction {fraction} not in (0, 1]");
    (0..)
        .map(|k| (k as f64 / fraction).round() as usize)
        .take_while(|&i| i < frames)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_examples() {
        assert_eq!(interval_sample(10, 0.1), vec![0]);
        assert_eq!(interval_sample(20, 0.1), vec![0, 10]);
        let s = interval_sample(100, 0.1);
        assert_eq!(s.len(), 10);
        assert!(s.windows(2).all(|w| w[1] - w[0] == 10));
        assert_eq!(interval_sample(3, 1.0), vec![0, 1, 2]);
    }

    #[test]
    fn hand_three_class_matrix() {
        // truth: 0 0 1 1 2 2 ; pred: 0 1 1 1 2 0
        let mut cm = ConfusionMatrix::new(3);
        cm.add(&[0, 1, 1, 1, 2, 0], &[0, 0, 1, 1, 2, 2]).unwrap();
        let iou = cm.class_iou();
        assert_eq!(iou[1], Some(2.0 / 3.0));
        assert_eq!(iou[2], Some(1.0 / 2.0));
        assert!((cm.mean_iou() - (2.0 / 3.0 + 0.5) / 2.0).abs() < 1e-15);
        // Occupied: truth {2,3,4,5}, pred {1,2,3,4}.
        assert_eq!(cm.occupancy_iou(), 3.0 / 5.0);
    }

    #[test]
    fn all_free_prediction_scores_zero_iou() {
        let truth = LabelGrid::from_vec([1, 1, 4], vec![0, 0, 3, 3]).unwrap();
        let pred = LabelGrid::filled([1, 1, 4], 0);
        assert_eq!(evaluate(&pred, &truth, 4).unwrap().iou, 0.0);
        let perfect = evaluate(&truth, &truth, 4).unwrap();
        assert_eq!((perfect.iou, perfect.miou), (1.0, 1.0));
    }
}
