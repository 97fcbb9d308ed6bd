//! Scatter-accumulated projection of voxel features onto the image plane.

use semocc_tensor::{Graph, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{dims_err, Result};
use crate::geometry::{project_voxel_centers, CameraCalibration, GridSpec};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionMode {
    #[default]
    Plain,
    /// Each voxel contributes with weight `1 / (1 + depth)`.
    DistanceWeighted,
}

/// Voxel-to-pixel routing for one grid and camera.
#[derive(Clone, Debug, PartialEq)]
pub struct ScatterProjector {
    pub dims: [usize; 3],
    pub height: usize,
    pub width: usize,
    /// Per voxel in flat order: target pixel and camera depth.
    pub targets: Vec<Option<(usize, f64)>>,
}

impl ScatterProjector {
    /// `calib` describes the target pixel grid.
    pub fn new(grid: &GridSpec, calib: &CameraCalibration) -> Self {
        let targets = project_voxel_centers(grid, calib)
            .into_iter()
            .map(|p| p.map(|p| (p.pixel, p.depth)))
            .collect();
        Self {
            dims: grid.dims,
            height: calib.height(),
            width: calib.width(),
            targets,
        }
    }

    /// Same routing with the voxels where `keep` is false dropped.
    pub fn keep_only(&self, keep: &[bool]) -> Self {
        assert_eq!(keep.len(), self.targets.len(), "keep mask length");
        Self {
            targets: self.targets.iter().zip(keep).map(|(t, &k)| t.filter(|_| k)).collect(),
            ..self.clone()
        }
    }

    /// Keeps, per pixel, only the nearest voxel among those where `keep` holds.
    pub fn first_hits(&self, keep: &[bool]) -> Self {
        let mut nearest: Vec<Option<(usize, f64)>> = vec![None; self.height * self.width];
        for (v, t) in self.targets.iter().enumerate() {
            if let (Some((p, d)), true) = (*t, keep[v]) {
                if nearest[p].is_none_or(|(_, best)| d < best) {
                    nearest[p] = Some((v, d));
                }
            }
        }
        let mut targets = vec![None; self.targets.len()];
        for (p, n) in nearest.iter().enumerate() {
            if let Some((v, d)) = *n {
                targets[v] = Some((p, d));
            }
        }
        Self { targets, ..self.clone() }
    }

    /// Voxels landing on each pixel.
    pub fn hit_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.height * self.width];
        for &(p, _) in self.targets.iter().flatten() {
            counts[p] += 1;
        }
        counts
    }
}

/// `[C, H, W, Z]` voxel features summed per pixel into `[C, h, w]`.
pub fn scatter_project(g: &mut Graph, features: Var, projector: &ScatterProjector, mode: ProjectionMode) -> Result<Var> {
    let shape = g.shape(features).to_vec();
    let [h, w, z] = projector.dims;
    if shape.len() != 4 || shape[1..] != [h, w, z] {
        return Err(dims_err("projected features", ("C", h, w, z), shape));
    }
    let c = shape[0];
    let pixels = projector.height * projector.width;
    let (mut voxels, mut targets, mut weights) = (Vec::new(), Vec::new(), Vec::new());
    for (v, t) in projector.targets.iter().enumerate() {
        if let Some((p, depth)) = *t {
            voxels.push(v);
            targets.push(p);
            weights.push(1.0 / (1.0 + depth));
        }
    }
    if voxels.is_empty() {
        return Ok(g.constant(&Tensor::zeros(&[c, projector.height, projector.width])));
    }
    let flat = g.reshape(features, &[c, h * w * z])?;
    let mut picked = g.gather(flat, 1, &voxels)?;
    if mode == ProjectionMode::DistanceWeighted {
        let n = voxels.len();
        let wt = g.constant_from(&[c, n], weights.iter().copied().cycle().take(c * n).collect())?;
        picked = g.mul(picked, wt)?;
    }
    let summed = g.scatter_add(picked, 1, &targets, pixels)?;
    Ok(g.reshape(summed, &[c, projector.height, projector.width])?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> ScatterProjector {
        ScatterProjector {
            dims: [1, 1, 4],
            height: 1,
            width: 2,
            targets: vec![Some((0, 3.0)), Some((0, 1.0)), Some((1, 2.0)), None],
        }
    }

    #[test]
    fn first_hits_keep_the_nearest_kept_voxel() {
        let p = toy().first_hits(&[true, true, true, true]);
        assert_eq!(p.targets, vec![None, Some((0, 1.0)), Some((1, 2.0)), None]);
        let p = toy().first_hits(&[true, false, false, true]);
        assert_eq!(p.targets, vec![Some((0, 3.0)), None, None, None]);
    }

    #[test]
    fn keep_only_drops_masked_voxels() {
        let p = toy().keep_only(&[false, true, true, true]);
        assert_eq!(p.hit_counts(), vec![1, 1]);
    }
}
