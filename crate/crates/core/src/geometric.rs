//! Camera and LiDAR geometry network built on three axis-aligned planes.

use rand::Rng;
use semocc_tensor::{Graph, ParamStore, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{dims_err, Result};
use crate::geometry::{lift_feature_map, CameraCalibration, GridSpec, SparseVoxelSet, DENSE_CHANNELS};
use crate::image::Image;
use crate::nn::{Conv2d, Conv3d, Init, Linear};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    /// Position of the axis in a `[C, H, W, Z]` grid.
    pub fn grid_dim(self) -> usize {
        match self {
            Axis::X => 1,
            Axis::Y => 2,
            Axis::Z => 3,
        }
    }
}

/// Learned mix of `N` frame grids into one: a kernel-`N` convolution across
/// the frame axis, stored as a linear map over frame-stacked channels.
#[derive(Clone, Debug)]
pub struct FrameFuser {
    pub mix: Linear,
    pub frames: usize,
    pub channels: usize,
}

impl FrameFuser {
    /// Starts as the mean over frames.
    pub fn new(store: &mut ParamStore, name: &str, frames: usize, channels: usize, rng: &mut impl Rng) -> Self {
        let mix = Linear::new(store, name, frames * channels, channels, Init::Zero, rng);
        let w = store.get_mut(mix.weight).data_mut();
        for n in 0..frames {
            for c in 0..channels {
                w[c * frames * channels + n * channels + c] = 1.0 / frames as f64;
            }
        }
        Self { mix, frames, channels }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, grids: &[Var]) -> Result<Var> {
        fuse_frames(g, store, &self.mix, grids)
    }
}

/// `out[c] = sum_{n, c'} W[c, n * C + c'] grids[n][c'] + b[c]`.
pub fn fuse_frames(g: &mut Graph, store: &ParamStore, mix: &Linear, grids: &[Var]) -> Result<Var> {
    let Some(&first) = grids.first() else {
        return Err(dims_err("fuse_frames", "at least one grid", 0));
    };
    let shape = g.shape(first).to_vec();
    for &v in grids {
        if g.shape(v) != shape.as_slice() {
            return Err(dims_err("fuse_frames grid", &shape, g.shape(v)));
        }
    }
    if mix.inputs != grids.len() * shape[0] {
        return Err(dims_err("fuse_frames inputs", mix.inputs, grids.len() * shape[0]));
    }
    let stacked = if grids.len() == 1 { first } else { g.concat(grids, 0)? };
    mix.forward(g, store, stacked)
}

/// Mean of a `[C, H, W, Z]` grid along `axis`, giving the remaining two axes in order.
pub fn reduce_to_plane(g: &mut Graph, grid: Var, axis: Axis) -> Result<Var> {
    Ok(g.mean_axis(grid, axis.grid_dim())?)
}

/// Plane reduction followed by a 3x3 convolution.
pub fn stack_to_planes(g: &mut Graph, store: &ParamStore, conv: &Conv2d, grid: Var, axis: Axis) -> Result<Var> {
    let plane = reduce_to_plane(g, grid, axis)?;
    conv.forward(g, store, plane)
}

/// Single-head attention along one axis of a `[C, W, Z]` plane, added residually.
#[derive(Clone, Debug)]
pub struct AxisAttention {
    pub query: Linear,
    pub key: Linear,
    /// No bias, so a zero weight makes the update exactly zero.
    pub value: Linear,
}

impl AxisAttention {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, rng: &mut impl Rng) -> Self {
        Self {
            query: Linear::new(store, &format!("{name}.q"), channels, channels, Init::Small, rng),
            key: Linear::new(store, &format!("{name}.k"), channels, channels, Init::Small, rng),
            value: Linear::without_bias(store, &format!("{name}.v"), channels, channels, Init::Small, rng),
        }
    }

    /// `along_y`: tokens are the `W` positions of each `z` column; otherwise the
    /// `Z` positions of each `y` row.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, plane: Var, along_y: bool) -> Result<Var> {
        let update = self.update(g, store, plane, along_y)?;
        Ok(g.add(plane, update)?)
    }

    /// The attention term alone, before the residual add.
    pub fn update(&self, g: &mut Graph, store: &ParamStore, plane: Var, along_y: bool) -> Result<Var> {
        let shape = g.shape(plane).to_vec();
        if shape.len() != 3 {
            return Err(dims_err("attention plane", "[C, W, Z]", shape));
        }
        let c = shape[0];
        let q = self.query.forward(g, store, plane)?;
        let k = self.key.forward(g, store, plane)?;
        let v = self.value.forward(g, store, plane)?;
        // Batch over the other axis, sequence along the attended one.
        let (tokens, keys_t, back) = if along_y {
            ([2, 1, 0], [2, 0, 1], [2, 1, 0])
        } else {
            ([1, 2, 0], [1, 0, 2], [2, 0, 1])
        };
        let qs = g.permute(q, &tokens)?;
        let kt = g.permute(k, &keys_t)?;
        let vs = g.permute(v, &tokens)?;
        let scores = g.batch_matmul(qs, kt)?;
        let scores = g.scale(scores, 1.0 / (c as f64).sqrt());
        let attn = g.softmax(scores, 2)?;
        let out = g.batch_matmul(attn, vs)?;
        Ok(g.permute(out, &back)?)
    }
}

/// `F_yzy` and `F_yzz` from `F_yz`.
pub fn axis_self_attention(
    g: &mut Graph,
    store: &ParamStore,
    along_y: &AxisAttention,
    along_z: &AxisAttention,
    f_yz: Var,
) -> Result<(Var, Var)> {
    let yzy = along_y.forward(g, store, f_yz, true)?;
    let yzz = along_z.forward(g, store, f_yz, false)?;
    Ok((yzy, yzz))
}

/// LiDAR planes `xz` `[C, H, Z]`, `xy` `[C, H, W]` and attention-refined image
/// planes `yzy`, `yzz` `[C, W, Z]`, combined into
/// `F[c,h,w,z] = xz[c,h,z] yzz[c,w,z] + xy[c,h,w] yzy[c,w,z]`.
pub fn cross_plane_synergy(g: &mut Graph, xz: Var, xy: Var, yzy: Var, yzz: Var) -> Result<Var> {
    let (sxz, sxy, sy, sz) = (
        g.shape(xz).to_vec(),
        g.shape(xy).to_vec(),
        g.shape(yzy).to_vec(),
        g.shape(yzz).to_vec(),
    );
    if [&sxz, &sxy, &sy, &sz].iter().any(|s| s.len() != 3) {
        return Err(dims_err("planes", "rank 3", (sxz, sxy, sy, sz)));
    }
    let (c, h, w, z) = (sxz[0], sxz[1], sy[1], sy[2]);
    if sxy != [c, h, w] || sy != [c, w, z] || sz != [c, w, z] || sxz != [c, h, z] {
        return Err(dims_err("plane axes", ([c, h, z], [c, h, w], [c, w, z]), (sxz, sxy, sy, sz)));
    }
    let a = g.expand(xz, 2, w)?;
    let b = g.expand(yzz, 1, h)?;
    let f1 = g.mul(a, b)?;
    let a = g.expand(xy, 3, z)?;
    let b = g.expand(yzy, 1, h)?;
    let f2 = g.mul(a, b)?;
    Ok(g.add(f1, f2)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeometryConfig {
    pub width: usize,
    /// Frames fused per prediction.
    pub frames: usize,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self { width: 6, frames: 1 }
    }
}

/// One frame of sensor input.
#[derive(Clone, Copy, Debug)]
pub struct FrameRef<'a> {
    pub image: &'a Image,
    pub voxels: &'a SparseVoxelSet,
    pub calib: &'a CameraCalibration,
}

#[derive(Clone, Copy, Debug)]
pub struct GeometryOutput {
    /// Geometry feature grid at full resolution, `[width, H, W, Z]`.
    pub features: Var,
    /// `[2, H, W, Z]`: free, occupied.
    pub logits: Var,
    pub planes: PlaneVars,
}

#[derive(Clone, Copy, Debug)]
pub struct PlaneVars {
    pub xz: Var,
    pub xy: Var,
    pub yz: Var,
    pub yzy: Var,
    pub yzz: Var,
    /// Cross-plane product at half resolution.
    pub fused: Var,
}

#[derive(Clone, Debug)]
pub struct GeometryNet {
    pub config: GeometryConfig,
    image_convs: [Conv2d; 2],
    lidar_full: Conv3d,
    lidar_half: Conv3d,
    fuse_image: FrameFuser,
    fuse_lidar: FrameFuser,
    plane_xz: Conv2d,
    plane_xy: Conv2d,
    plane_yz: Conv2d,
    attend_y: AxisAttention,
    attend_z: AxisAttention,
    head_conv: Conv3d,
    head: Linear,
}

impl GeometryNet {
    pub fn new(store: &mut ParamStore, prefix: &str, config: GeometryConfig, rng: &mut impl Rng) -> Self {
        let c = config.width;
        let n = config.frames;
        let p = |s: &str| format!("{prefix}.{s}");
        Self {
            image_convs: [
                Conv2d::new(store, &p("img0"), 3, c, 1, Init::He, rng),
                Conv2d::new(store, &p("img1"), c, c, 2, Init::He, rng),
            ],
            lidar_full: Conv3d::new(store, &p("lidar0"), DENSE_CHANNELS, c, Init::He, rng),
            lidar_half: Conv3d::new(store, &p("lidar1"), c, c, Init::He, rng),
            fuse_image: FrameFuser::new(store, &p("fuse_img"), n, c, rng),
            fuse_lidar: FrameFuser::new(store, &p("fuse_lidar"), n, c, rng),
            plane_xz: Conv2d::new(store, &p("plane_xz"), c, c, 1, Init::Small, rng),
            plane_xy: Conv2d::new(store, &p("plane_xy"), c, c, 1, Init::Small, rng),
            plane_yz: Conv2d::new(store, &p("plane_yz"), c, c, 1, Init::Small, rng),
            attend_y: AxisAttention::new(store, &p("attn_y"), c, rng),
            attend_z: AxisAttention::new(store, &p("attn_z"), c, rng),
            head_conv: Conv3d::new(store, &p("head_conv"), 2 * c, c, Init::He, rng),
            head: Linear::new(store, &p("head"), c, 2, Init::Small, rng),
            config,
        }
    }

    /// Frames must share one grid; the last frame is the one predicted.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, grid: &GridSpec, frames: &[FrameRef]) -> Result<GeometryOutput> {
        if frames.len() != self.config.frames {
            return Err(dims_err("geometry frames", self.config.frames, frames.len()));
        }
        let half = grid.coarsened(2)?;
        let c = self.config.width;
        let mut image_grids = Vec::new();
        let mut lidar_grids = Vec::new();
        let mut full_res = None;
        for f in frames {
            let img = g.constant(&f.image.to_tensor());
            let a = self.image_convs[0].forward(g, store, img)?;
            let a = g.relu(a);
            let b = self.image_convs[1].forward(g, store, a)?;
            let b = g.relu(b);
            image_grids.push(lift_feature_map(g, b, c, &half, &f.calib.downscaled(2))?);

            let dense = g.constant(&f.voxels.densify());
            let l = self.lidar_full.forward(g, store, dense)?;
            let l = g.relu(l);
            full_res = Some(l);
            let pooled = g.avg_pool3d(l)?;
            let l2 = self.lidar_half.forward(g, store, pooled)?;
            lidar_grids.push(g.relu(l2));
        }
        let image_grid = self.fuse_image.forward(g, store, &image_grids)?;
        let lidar_grid = self.fuse_lidar.forward(g, store, &lidar_grids)?;
        let xz = stack_to_planes(g, store, &self.plane_xz, lidar_grid, Axis::Y)?;
        let xy = stack_to_planes(g, store, &self.plane_xy, lidar_grid, Axis::Z)?;
        let yz = stack_to_planes(g, store, &self.plane_yz, image_grid, Axis::X)?;
        let (yzy, yzz) = axis_self_attention(g, store, &self.attend_y, &self.attend_z, yz)?;
        let fused = cross_plane_synergy(g, xz, xy, yzy, yzz)?;
        let up = g.upsample3d(fused)?;
        let cat = g.concat(&[up, full_res.expect("at least one frame")], 0)?;
        let h = self.head_conv.forward(g, store, cat)?;
        let features = g.relu(h);
        let logits = self.head.forward(g, store, features)?;
        Ok(GeometryOutput {
            features,
            logits,
            planes: PlaneVars {
                xz,
                xy,
                yz,
                yzy,
                yzz,
                fused,
            },
        })
    }
}

/// Softmax over the two geometry channels, then per voxel the winning class
/// and its probability.
pub fn occupancy_confidence(logits: &Tensor) -> Vec<(u16, f64)> {
    let n = logits.numel() / 2;
    let d = logits.data();
    (0..n)
        .map(|i| {
            let (l0, l1) = (d[i], d[n + i]);
            let p1 = 1.0 / (1.0 + (l0 - l1).exp());
            if p1 > 0.5 {
                (1, p1)
            } else {
                (0, 1.0 - p1)
            }
        })
        .collect()
}
