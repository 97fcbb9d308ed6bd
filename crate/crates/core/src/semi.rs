//! Confidence filtering of teacher predictions and the merged label stream.

use std::collections::BTreeMap;

use semocc_tensor::Tensor;

use crate::error::{dims_err, Error, Result};
use crate::geometric::occupancy_confidence;
use crate::labels::{LabelGrid, IGNORE};

#[derive(Clone, Debug, PartialEq)]
pub struct FilteredPseudo {
    /// Argmax class where kept, `IGNORE` elsewhere.
    pub labels: LabelGrid,
    pub keep: Vec<bool>,
}

impl FilteredPseudo {
    pub fn kept_fraction(&self) -> f64 {
        self.keep.iter().filter(|&&k| k).count() as f64 / self.keep.len().max(1) as f64
    }
}

/// Keeps voxels whose larger softmax probability is at least `tau`.
pub fn confidence_filter(logits: &Tensor, tau: f64) -> Result<FilteredPseudo> {
    let s = logits.shape();
    if s.len() != 4 || s[0] != 2 {
        return Err(dims_err("geometry logits", "[2, H, W, Z]", s));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Config(format!("confidence threshold {tau} is not in (0, 1)")));
    }
    let mut keep = Vec::with_capacity(logits.numel() / 2);
    let mut labels = Vec::with_capacity(keep.capacity());
    for (class, conf) in occupancy_confidence(logits) {
        let k = conf >= tau;
        keep.push(k);
        labels.push(if k { class } else { IGNORE });
    }
    Ok(FilteredPseudo {
        labels: LabelGrid::from_vec([s[1], s[2], s[3]], labels).expect("grid sized from logits"),
        keep,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelSource {
    Annotated,
    Pseudo,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SupervisedFrame {
    pub frame: usize,
    pub source: LabelSource,
    pub labels: LabelGrid,
}

/// Annotated and pseudo-labelled frames in frame order; the sets must be disjoint.
pub fn merge_supervision(
    annotated: Vec<(usize, LabelGrid)>,
    pseudo: Vec<(usize, LabelGrid)>,
) -> Result<Vec<SupervisedFrame>> {
    let mut stream = BTreeMap::new();
    let tagged = annotated
        .into_iter()
        .map(|f| (f, LabelSource::Annotated))
        .chain(pseudo.into_iter().map(|f| (f, LabelSource::Pseudo)));
    for ((frame, labels), source) in tagged {
        let entry = SupervisedFrame {
            frame,
            source,
            labels,
        };
        if stream.insert(frame, entry).is_some() {
            return Err(Error::OverlappingFrames(frame));
        }
    }
    Ok(stream.into_values().collect())
}
