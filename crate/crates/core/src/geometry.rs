//! Voxel grids, pinhole projection, voxelization and 2D-to-3D lifting.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use semocc_tensor::{Graph, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{dims_err, Error, Result};
use crate::labels::{LabelGrid, LabelMap, IGNORE};

/// Points kept per voxel before random subsampling kicks in.
pub const MAX_POINTS_PER_VOXEL: usize = 35;

/// Width of a voxel feature row: position, intensity, offset from center.
pub const POINT_FEATURES: usize = 7;

/// Channels of a densified voxel grid: mean point features plus occupancy.
pub const DENSE_CHANNELS: usize = POINT_FEATURES + 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub origin: [f64; 3],
    pub voxel_size: f64,
}

impl GridSpec {
    pub fn new(dims: [usize; 3], origin: [f64; 3], voxel_size: f64) -> Result<Self> {
        if dims.contains(&0) || !(voxel_size > 0.0) {
            return Err(dims_err("grid", "positive dims and voxel size", (dims, voxel_size)));
        }
        Ok(Self {
            dims,
            origin,
            voxel_size,
        })
    }

    /// 32 x 32 x 8 cells of 0.4 m in front of a sensor at the world origin.
    pub fn desk() -> Self {
        Self {
            dims: [32, 32, 8],
            origin: [0.0, -6.4, -1.6],
            voxel_size: 0.4,
        }
    }

    pub fn num_cells(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn flat(&self, [i, j, k]: [usize; 3]) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    pub fn unflat(&self, idx: usize) -> [usize; 3] {
        let k = idx % self.dims[2];
        let j = (idx / self.dims[2]) % self.dims[1];
        [idx / (self.dims[1] * self.dims[2]), j, k]
    }

    pub fn center(&self, cell: [usize; 3]) -> [f64; 3] {
        std::array::from_fn(|a| self.origin[a] + (cell[a] as f64 + 0.5) * self.voxel_size)
    }

    /// Cell containing `p`, or `None` outside the half-open grid box.
    pub fn cell_of(&self, p: [f64; 3]) -> Option<[usize; 3]> {
        let mut cell = [0; 3];
        for a in 0..3 {
            let f = ((p[a] - self.origin[a]) / self.voxel_size).floor();
            if !(f >= 0.0 && f < self.dims[a] as f64) {
                return None;
            }
            cell[a] = f as usize;
        }
        Some(cell)
    }

    pub fn extent(&self) -> [f64; 3] {
        std::array::from_fn(|a| self.dims[a] as f64 * self.voxel_size)
    }

    /// Same box at `factor` times coarser cells.
    pub fn coarsened(&self, factor: usize) -> Result<Self> {
        if self.dims.iter().any(|d| d % factor != 0) {
            return Err(dims_err("coarsened grid", format!("dims divisible by {factor}"), self.dims));
        }
        Ok(Self {
            dims: self.dims.map(|d| d / factor),
            origin: self.origin,
            voxel_size: self.voxel_size * factor as f64,
        })
    }
}

/// Pinhole camera: `K` intrinsics, `T` world-to-camera, image `height x width`.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraCalibration {
    k: [[f64; 3]; 3],
    t: [[f64; 4]; 4],
    height: usize,
    width: usize,
}

impl CameraCalibration {
    pub fn new(k: [[f64; 3]; 3], t: [[f64; 4]; 4], height: usize, width: usize) -> Result<Self> {
        let bad = |m: &str| Err(Error::Calibration(m.to_string()));
        if k[2] != [0.0, 0.0, 1.0] || k[1][0] != 0.0 {
            return bad("K must be upper triangular with K[2][2] = 1");
        }
        if !(k[0][0] > 0.0 && k[1][1] > 0.0) {
            return bad("focal lengths must be positive");
        }
        if height == 0 || width == 0 {
            return bad("image size must be positive");
        }
        if t[3] != [0.0, 0.0, 0.0, 1.0] {
            return bad("T must be affine");
        }
        for a in 0..3 {
            for b in 0..3 {
                let dot: f64 = (0..3).map(|c| t[a][c] * t[b][c]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-9 {
                    return bad("rotation block of T is not orthonormal");
                }
            }
        }
        Ok(Self {
            k,
            t,
            height,
            width,
        })
    }

    /// Forward-looking camera at `position` (world frame: x forward, y left, z up),
    /// pitched down by `pitch` radians, with square pixels of focal `focal`.
    pub fn looking_forward(position: [f64; 3], pitch: f64, focal: f64, height: usize, width: usize) -> Result<Self> {
        let (s, c) = pitch.sin_cos();
        // Rows are the camera axes (right, down, forward) in world coordinates.
        let r = [[0.0, -1.0, 0.0], [-s, 0.0, -c], [c, 0.0, -s]];
        let mut t = [[0.0; 4]; 4];
        for a in 0..3 {
            t[a][..3].copy_from_slice(&r[a]);
            t[a][3] = -(0..3).map(|b| r[a][b] * position[b]).sum::<f64>();
        }
        t[3][3] = 1.0;
        let k = [
            [focal, 0.0, width as f64 / 2.0],
            [0.0, focal, height as f64 / 2.0],
            [0.0, 0.0, 1.0],
        ];
        Self::new(k, t, height, width)
    }

    pub fn k(&self) -> &[[f64; 3]; 3] {
        &self.k
    }

    pub fn t(&self) -> &[[f64; 4]; 4] {
        &self.t
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Camera center in world coordinates.
    pub fn position(&self) -> [f64; 3] {
        std::array::from_fn(|b| -(0..3).map(|a| self.t[a][b] * self.t[a][3]).sum::<f64>())
    }

    pub fn to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|a| (0..3).map(|b| self.t[a][b] * p[b]).sum::<f64>() + self.t[a][3])
    }

    /// Continuous pixel `(u, v)` and depth, or `None` when behind the camera or off-image.
    pub fn project(&self, p: [f64; 3]) -> Option<Projected> {
        let c = self.to_camera(p);
        if c[2] <= 0.0 {
            return None;
        }
        let k = &self.k;
        let u = (k[0][0] * c[0] + k[0][1] * c[1] + k[0][2] * c[2]) / c[2];
        let v = (k[1][1] * c[1] + k[1][2] * c[2]) / c[2];
        if !(u >= 0.0 && u < self.width as f64 && v >= 0.0 && v < self.height as f64) {
            return None;
        }
        Some(Projected {
            u,
            v,
            depth: c[2],
            pixel: v as usize * self.width + u as usize,
        })
    }

    /// Calibration of a feature map with `stride` times fewer pixels per side.
    pub fn downscaled(&self, stride: usize) -> Self {
        let s = stride as f64;
        let mut k = self.k;
        for row in k.iter_mut().take(2) {
            for e in row.iter_mut() {
                *e /= s;
            }
        }
        Self {
            k,
            t: self.t,
            height: self.height.div_ceil(stride),
            width: self.width.div_ceil(stride),
        }
    }

    /// Unit ray direction in world coordinates through continuous pixel `(u, v)`.
    pub fn ray(&self, u: f64, v: f64) -> [f64; 3] {
        let k = &self.k;
        let y = (v - k[1][2]) / k[1][1];
        let x = (u - k[0][2] - k[0][1] * y) / k[0][0];
        let cam = [x, y, 1.0];
        let mut d: [f64; 3] = std::array::from_fn(|b| (0..3).map(|a| self.t[a][b] * cam[a]).sum());
        let n = d.iter().map(|e| e * e).sum::<f64>().sqrt();
        d.iter_mut().for_each(|e| *e /= n);
        d
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projected {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
    /// Row-major index of the pixel containing `(u, v)`.
    pub pixel: usize,
}

/// Per voxel (flat grid order), its projection or `None`.
pub fn project_voxel_centers(grid: &GridSpec, calib: &CameraCalibration) -> Vec<Option<Projected>> {
    (0..grid.num_cells())
        .map(|i| calib.project(grid.center(grid.unflat(i))))
        .collect()
}

/// Nearest-pixel lift of a label map; invisible voxels are `IGNORE`.
pub fn lift_label_map(map: &LabelMap, grid: &GridSpec, calib: &CameraCalibration) -> Result<LabelGrid> {
    if (map.height(), map.width()) != (calib.height(), calib.width()) {
        return Err(dims_err(
            "label map",
            (calib.height(), calib.width()),
            (map.height(), map.width()),
        ));
    }
    let data = project_voxel_centers(grid, calib)
        .into_iter()
        .map(|p| p.map_or(IGNORE, |p| map.data()[p.pixel]))
        .collect();
    Ok(LabelGrid::from_vec(grid.dims, data).expect("one label per cell"))
}

/// Nearest-pixel lift of a `[C, h, w]` feature map into a `[C, H, W, Z]` grid.
/// Invisible voxels get zeros.
pub fn lift_feature_map(
    g: &mut Graph,
    features: Var,
    channels: usize,
    grid: &GridSpec,
    calib: &CameraCalibration,
) -> Result<Var> {
    let shape = g.shape(features).to_vec();
    if shape.len() != 3 || shape[0] != channels {
        return Err(dims_err("feature map channels", channels, shape));
    }
    if (shape[1], shape[2]) != (calib.height(), calib.width()) {
        return Err(dims_err("feature map size", (calib.height(), calib.width()), shape));
    }
    let pixels = shape[1] * shape[2];
    let idx: Vec<usize> = project_voxel_centers(grid, calib)
        .into_iter()
        .map(|p| p.map_or(pixels, |p| p.pixel))
        .collect();
    let flat = g.reshape(features, &[channels, pixels])?;
    let zero = g.constant(&Tensor::zeros(&[channels, 1]));
    let padded = g.concat(&[flat, zero], 1)?;
    let lifted = g.gather(padded, 1, &idx)?;
    let [h, w, z] = grid.dims;
    Ok(g.reshape(lifted, &[channels, h, w, z])?)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 4]>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 4]>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Voxel {
    pub cell: [usize; 3],
    /// Points that fell into the cell before subsampling.
    pub count: usize,
    pub rows: Vec<[f64; POINT_FEATURES]>,
}

/// Occupied voxels sorted by flat cell index.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseVoxelSet {
    pub grid: GridSpec,
    pub voxels: Vec<Voxel>,
    /// Points outside the grid.
    pub dropped: usize,
}

impl SparseVoxelSet {
    /// Point count per cell in flat order.
    pub fn point_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.grid.num_cells()];
        for v in &self.voxels {
            counts[self.grid.flat(v.cell)] = v.count;
        }
        counts
    }

    /// `[DENSE_CHANNELS, H, W, Z]` grid of mean point features plus an
    /// occupancy channel. Positions are rescaled to [-0.5, 0.5] over the grid
    /// box and offsets to [-0.5, 0.5] of a voxel.
    pub fn densify(&self) -> Tensor {
        let n = self.grid.num_cells();
        let mut data = vec![0.0; DENSE_CHANNELS * n];
        let extent = self.grid.extent();
        for v in &self.voxels {
            let cell = self.grid.flat(v.cell);
            let m = v.rows.len() as f64;
            for row in &v.rows {
                for a in 0..3 {
                    data[a * n + cell] += ((row[a] - self.grid.origin[a]) / extent[a] - 0.5) / m;
                    data[(4 + a) * n + cell] += row[4 + a] / self.grid.voxel_size / m;
                }
                data[3 * n + cell] += row[3] / m;
            }
            data[POINT_FEATURES * n + cell] = 1.0;
        }
        let [h, w, z] = self.grid.dims;
        Tensor::new(vec![DENSE_CHANNELS, h, w, z], data).expect("dense grid shape")
    }
}

/// Groups points by cell, keeping at most `max_points` seeded random rows per voxel.
pub fn voxelize(cloud: &PointCloud, grid: &GridSpec, max_points: usize, seed: u64) -> SparseVoxelSet {
    let mut members: Vec<(usize, usize)> = Vec::with_capacity(cloud.len());
    let mut dropped = 0;
    for (i, p) in cloud.points.iter().enumerate() {
        match grid.cell_of([p[0], p[1], p[2]]) {
            Some(c) => members.push((grid.flat(c), i)),
            None => dropped += 1,
        }
    }
    members.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut voxels = Vec::new();
    for group in members.chunk_by(|a, b| a.0 == b.0) {
        let cell = grid.unflat(group[0].0);
        let center = grid.center(cell);
        let mut chosen: Vec<usize> = if group.len() > max_points {
            let mut picks = sample(&mut rng, group.len(), max_points).into_vec();
            picks.sort_unstable();
            picks
        } else {
            (0..group.len()).collect()
        };
        let rows = chosen
            .drain(..)
            .map(|g| {
                let p = cloud.points[group[g].1];
                [p[0], p[1], p[2], p[3], p[0] - center[0], p[1] - center[1], p[2] - center[2]]
            })
            .collect();
        voxels.push(Voxel {
            cell,
            count: group.len(),
            rows,
        });
    }
    SparseVoxelSet {
        grid: *grid,
        voxels,
        dropped,
    }
}
