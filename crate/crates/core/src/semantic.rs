//! Aligned pseudo labels and the 2D/3D semantic networks they supervise.

use rand::Rng;
use semocc_tensor::{Graph, ParamStore, Var};
use serde::{Deserialize, Serialize};

use crate::error::{dims_err, Error, Result};
use crate::geometry::{SparseVoxelSet, DENSE_CHANNELS};
use crate::labels::{LabelGrid, LabelMap};
use crate::losses::{occupancy_loss, weighted_ce, OccTerm};
use crate::nn::{Conv2d, Conv3d, Init, Linear};
use crate::taxonomy::ClassTaxonomy;

/// Boolean image mask for an open-vocabulary class.
#[derive(Clone, Debug, PartialEq)]
pub struct AuxMask {
    pub name: String,
    pub height: usize,
    pub width: usize,
    pub mask: Vec<bool>,
}

/// Maps the primary segmentation through the taxonomy, then lets each
/// auxiliary mask overwrite the pixels it covers; later masks win.
pub fn align_pseudo_labels(primary: &LabelMap, aux: &[AuxMask], taxonomy: &ClassTaxonomy) -> Result<LabelMap> {
    let mut out = primary.clone();
    out.data_mut().iter_mut().for_each(|v| *v = taxonomy.map(*v));
    for m in aux {
        let class = taxonomy
            .auxiliary(&m.name)
            .ok_or_else(|| Error::UnknownAuxClass(m.name.clone()))?;
        if (m.height, m.width) != (primary.height(), primary.width()) || m.mask.len() != m.height * m.width {
            return Err(dims_err("auxiliary mask", (primary.height(), primary.width()), (m.height, m.width)));
        }
        for (v, &hit) in out.data_mut().iter_mut().zip(&m.mask) {
            if hit {
                *v = class;
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SemanticConfig {
    pub classes: usize,
    /// Channel widths of the four encoder levels; the last is the stride-8 feature.
    pub widths_2d: [usize; 4],
    pub width_3d: usize,
}

impl Default for SemanticConfig {
    fn default() -> Self {
        Self {
            classes: 12,
            widths_2d: [8, 12, 16, 16],
            width_3d: 6,
        }
    }
}

/// Image U-net and voxel conv stack, each with a per-position class head.
#[derive(Clone, Debug)]
pub struct SemanticNets {
    pub config: SemanticConfig,
    encoder: Vec<Conv2d>,
    decoder: Vec<Conv2d>,
    head_2d: Linear,
    convs_3d: Vec<Conv3d>,
    head_3d: Linear,
}

#[derive(Clone, Copy, Debug)]
pub struct Semantic2d {
    /// `[widths_2d[3], ceil(h/8), ceil(w/8)]`.
    pub features: Var,
    /// `[M, h, w]`.
    pub logits: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct Semantic3d {
    /// `[width_3d, H, W, Z]`.
    pub features: Var,
    /// `[M, H, W, Z]`.
    pub logits: Var,
}

impl SemanticNets {
    pub fn new(store: &mut ParamStore, prefix: &str, config: SemanticConfig, rng: &mut impl Rng) -> Self {
        let w = config.widths_2d;
        let mut encoder = Vec::new();
        let mut prev = 3;
        for (level, &width) in w.iter().enumerate() {
            let stride = if level == 0 { 1 } else { 2 };
            encoder.push(Conv2d::new(store, &format!("{prefix}.enc{level}"), prev, width, stride, Init::He, rng));
            prev = width;
        }
        let mut decoder = Vec::new();
        for level in (0..3).rev() {
            let name = format!("{prefix}.dec{level}");
            decoder.push(Conv2d::new(store, &name, prev + w[level], w[level], 1, Init::He, rng));
            prev = w[level];
        }
        let head_2d = Linear::new(store, &format!("{prefix}.head2d"), w[0], config.classes, Init::Small, rng);
        let c3 = config.width_3d;
        let convs_3d = vec![
            Conv3d::new(store, &format!("{prefix}.vox0"), DENSE_CHANNELS, c3, Init::He, rng),
            Conv3d::new(store, &format!("{prefix}.vox1"), c3, c3, Init::He, rng),
        ];
        let head_3d = Linear::new(store, &format!("{prefix}.head3d"), c3, config.classes, Init::Small, rng);
        Self {
            config,
            encoder,
            decoder,
            head_2d,
            convs_3d,
            head_3d,
        }
    }

    pub fn head_2d(&self) -> &Linear {
        &self.head_2d
    }

    pub fn head_3d(&self) -> &Linear {
        &self.head_3d
    }

    /// Image `[3, h, w]` to stride-8 features and full-resolution logits.
    pub fn forward_2d(&self, g: &mut Graph, store: &ParamStore, image: Var) -> Result<Semantic2d> {
        let shape = g.shape(image).to_vec();
        if shape.len() != 3 || shape[0] != 3 {
            return Err(dims_err("image", "[3, h, w]", shape));
        }
        let mut skips = Vec::new();
        let mut x = image;
        for conv in &self.encoder {
            let y = conv.forward(g, store, x)?;
            x = g.relu(y);
            skips.push(x);
        }
        let features = x;
        for (conv, skip) in self.decoder.iter().zip(skips[..3].iter().rev()) {
            let s = g.shape(*skip).to_vec();
            let up = g.upsample2d(x, s[1], s[2])?;
            let cat = g.concat(&[up, *skip], 0)?;
            let y = conv.forward(g, store, cat)?;
            x = g.relu(y);
        }
        let logits = self.head_2d.forward(g, store, x)?;
        Ok(Semantic2d { features, logits })
    }

    /// Densified voxels to grid features and logits.
    pub fn forward_3d(&self, g: &mut Graph, store: &ParamStore, voxels: &SparseVoxelSet) -> Result<Semantic3d> {
        let mut x = g.constant(&voxels.densify());
        for conv in &self.convs_3d {
            let y = conv.forward(g, store, x)?;
            x = g.relu(y);
        }
        let logits = self.head_3d.forward(g, store, x)?;
        Ok(Semantic3d { features: x, logits })
    }
}

/// Inputs of the semantic loss for one frame.
pub struct SemanticTargets<'a> {
    pub pixel_labels: &'a LabelMap,
    pub voxel_labels: &'a LabelGrid,
    pub point_counts: &'a [usize],
    pub pixel_weights: &'a [f64],
    pub voxel_weights: &'a [f64],
}

/// Pixel cross-entropy plus occupancy loss on voxels holding more than one point.
pub fn semantic_loss(
    g: &mut Graph,
    pixel_logits: Var,
    voxel_logits: Var,
    t: &SemanticTargets,
    terms: &[OccTerm],
) -> Result<Var> {
    let ce = weighted_ce(g, pixel_logits, t.pixel_labels.data(), t.pixel_weights)?;
    let mask: Vec<bool> = t.point_counts.iter().map(|&n| n > 1).collect();
    let occ = occupancy_loss(g, voxel_logits, t.voxel_labels.data(), Some(&mask), t.voxel_weights, terms)?;
    Ok(g.add(ce, occ)?)
}
