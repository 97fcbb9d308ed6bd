//! Semantic and geometric feature-grid fusion with 3D and projected 2D heads.

pub mod hilbert;
pub mod mamba;
pub mod project;

use rand::Rng;
use semocc_tensor::{Graph, ParamStore, Tensor, Var};
use serde::{Deserialize, Serialize};

pub use hilbert::HilbertOrder;
pub use mamba::{padded_dims, DualBlock, DualMambaStack, ScanBranch};
pub use project::{scatter_project, ProjectionMode, ScatterProjector};

use crate::error::Result;
use crate::geometry::{lift_feature_map, CameraCalibration, GridSpec};
use crate::nn::{Init, Linear};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub channels: usize,
    /// Fraction of channels the two branches exchange per block.
    pub rho: f64,
    /// Pixel stride of the projected segmentation relative to the image.
    pub projector_stride: usize,
    pub projection: ProjectionMode,
    /// Classify projected features with the voxel head instead of a separate one.
    pub shared_head: bool,
    /// During training, project only voxels the geometry branch calls occupied.
    pub occupancy_gate: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            channels: 8,
            rho: 0.5,
            projector_stride: 2,
            projection: ProjectionMode::Plain,
            shared_head: true,
            occupancy_gate: true,
        }
    }
}

/// Semantic features entering fusion.
#[derive(Clone, Copy, Debug)]
pub struct SemanticInputs {
    /// Stride-8 image features `[C2, h/8, w/8]`.
    pub image: Var,
    pub image_channels: usize,
    /// Voxel features `[C3, H, W, Z]`.
    pub voxels: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct FusionOutput {
    pub fused: Var,
    pub projected: Var,
    /// `[M, H, W, Z]`.
    pub voxel_logits: Var,
    /// `[M, h_p, w_p]`.
    pub pixel_logits: Var,
}

#[derive(Clone, Debug)]
pub struct FusionNet {
    pub config: FusionConfig,
    semantic_in: Linear,
    geometric_in: Linear,
    pub stack: DualMambaStack,
    voxel_head: Linear,
    pixel_head: Option<Linear>,
}

impl FusionNet {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        config: FusionConfig,
        grid: &GridSpec,
        semantic_channels: usize,
        geometric_channels: usize,
        classes: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let c = config.channels;
        let stack = DualMambaStack::new(store, &format!("{prefix}.stack"), c, config.rho, grid.dims, padded_dims(grid.dims), rng)?;
        Ok(Self {
            semantic_in: Linear::new(store, &format!("{prefix}.sem_in"), semantic_channels, c, Init::He, rng),
            geometric_in: Linear::new(store, &format!("{prefix}.geo_in"), geometric_channels, c, Init::He, rng),
            stack,
            voxel_head: Linear::new(store, &format!("{prefix}.voxel_head"), c, classes, Init::Small, rng),
            pixel_head: (!config.shared_head).then(|| Linear::new(store, &format!("{prefix}.pixel_head"), c, classes, Init::Zero, rng)),
            config,
        })
    }

    pub fn projector(&self, grid: &GridSpec, calib: &CameraCalibration) -> ScatterProjector {
        ScatterProjector::new(grid, &calib.downscaled(self.config.projector_stride))
    }

    /// Without semantic inputs the semantic branch starts from zeros.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        semantic: Option<SemanticInputs>,
        geometric: Var,
        grid: &GridSpec,
        calib: &CameraCalibration,
        projector: &ScatterProjector,
    ) -> Result<FusionOutput> {
        let [h, w, z] = grid.dims;
        let fs = match semantic {
            Some(s) => {
                let lifted = lift_feature_map(g, s.image, s.image_channels, grid, &calib.downscaled(8))?;
                let cat = g.concat(&[lifted, s.voxels], 0)?;
                let x = self.semantic_in.forward(g, store, cat)?;
                g.relu(x)
            }
            None => g.constant(&Tensor::zeros(&[self.config.channels, h, w, z])),
        };
        let fg = self.geometric_in.forward(g, store, geometric)?;
        let fg = g.relu(fg);
        let fused = self.stack.forward(g, store, fs, fg)?;
        let fused = g.relu(fused);
        let projected = scatter_project(g, fused, projector, self.config.projection)?;
        let (voxel_logits, pixel_logits) = self.heads(g, store, fused, projected)?;
        Ok(FusionOutput {
            fused,
            projected,
            voxel_logits,
            pixel_logits,
        })
    }

    /// Per-cell linear heads on the fused grid and its projection.
    pub fn heads(&self, g: &mut Graph, store: &ParamStore, fused: Var, projected: Var) -> Result<(Var, Var)> {
        let y3 = self.voxel_head.forward(g, store, fused)?;
        let y2 = self.pixel_head().forward(g, store, projected)?;
        Ok((y3, y2))
    }

    pub fn voxel_head(&self) -> &Linear {
        &self.voxel_head
    }

    /// The shared variant reuses the voxel weights without the bias, so the
    /// projected sums cannot drag the free-class bias.
    pub fn pixel_head(&self) -> Linear {
        match &self.pixel_head {
            Some(h) => h.clone(),
            None => Linear {
                bias: None,
                ..self.voxel_head.clone()
            },
        }
    }
}
