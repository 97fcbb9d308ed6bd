//! Procedural street scenes. Primitives are rasterised into voxel labels and
//! every sensor output is raycast against that voxel grid, so image, LiDAR
//! and segmentation agree with the ground truth by construction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{CameraCalibration, GridSpec, PointCloud};
use crate::image::Image;
use crate::labels::{LabelGrid, LabelMap, FREE};
use crate::semantic::AuxMask;
use crate::taxonomy::source;

/// Desk taxonomy class IDs.
pub mod class {
    pub const CAR: u16 = 1;
    pub const TRUCK: u16 = 2;
    pub const ROAD: u16 = 3;
    pub const SIDEWALK: u16 = 4;
    pub const BUILDING: u16 = 5;
    pub const FENCE: u16 = 6;
    pub const VEGETATION: u16 = 7;
    pub const TRUNK: u16 = 8;
    pub const TERRAIN: u16 = 9;
    pub const POLE: u16 = 10;
    pub const SIGN: u16 = 11;
}

/// Base RGB per desk class, index 0 unused.
pub const PALETTE: [[f64; 3]; 12] = [
    [0.0, 0.0, 0.0],
    [0.75, 0.15, 0.15],
    [0.2, 0.3, 0.75],
    [0.3, 0.3, 0.32],
    [0.65, 0.6, 0.55],
    [0.55, 0.4, 0.3],
    [0.6, 0.5, 0.2],
    [0.2, 0.6, 0.2],
    [0.4, 0.25, 0.1],
    [0.5, 0.55, 0.25],
    [0.8, 0.8, 0.85],
    [0.95, 0.85, 0.1],
];

const REFLECTIVITY: [f64; 12] = [0.0, 0.6, 0.55, 0.15, 0.3, 0.35, 0.45, 0.5, 0.4, 0.25, 0.7, 0.9];

const SKY: [f64; 3] = [0.55, 0.7, 0.95];

/// Source segmenter ID a pixel of this class is rendered with; trunk shows up
/// as vegetation and is recovered by the auxiliary mask.
pub fn source_id(class: u16) -> u16 {
    match class {
        class::CAR => source::CAR,
        class::TRUCK => source::TRUCK,
        class::ROAD => source::ROAD,
        class::SIDEWALK => source::SIDEWALK,
        class::BUILDING => source::BUILDING,
        class::FENCE => source::FENCE,
        class::VEGETATION | class::TRUNK => source::VEGETATION,
        class::TERRAIN => source::TERRAIN,
        class::POLE => source::POLE,
        class::SIGN => source::TRAFFIC_SIGN,
        _ => source::SKY,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectCounts {
    pub ground: bool,
    /// Inclusive `[min, max]` per kind.
    pub cars: [usize; 2],
    pub trucks: [usize; 2],
    pub buildings_per_side: [usize; 2],
    pub fences: [usize; 2],
    pub trees: [usize; 2],
    pub bushes: [usize; 2],
    pub poles: [usize; 2],
    pub sign_probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeRanges {
    pub road_half_width: [f64; 2],
    pub sidewalk_width: [f64; 2],
    pub car_length: [f64; 2],
    pub car_width: [f64; 2],
    pub car_height: [f64; 2],
    pub truck_length: [f64; 2],
    pub truck_height: [f64; 2],
    pub building_length: [f64; 2],
    pub building_height: [f64; 2],
    pub fence_length: [f64; 2],
    pub fence_height: [f64; 2],
    pub trunk_height: [f64; 2],
    pub crown_radius: [f64; 2],
    pub bush_radius: [f64; 2],
    pub pole_height: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub position: [f64; 3],
    /// Downward tilt in radians.
    pub pitch: f64,
    pub focal: f64,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LidarPattern {
    pub origin: [f64; 3],
    pub azimuth_steps: usize,
    pub elevation_steps: usize,
    /// Degrees, counter-clockwise from the forward axis.
    pub azimuth_deg: [f64; 2],
    pub elevation_deg: [f64; 2],
    pub max_range: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub grid: GridSpec,
    pub camera: CameraRig,
    pub lidar: LidarPattern,
    pub objects: ObjectCounts,
    pub sizes: SizeRanges,
    /// Fraction of segmentation pixels replaced by a random class, and of
    /// LiDAR returns given range noise.
    pub label_noise: f64,
}

impl SceneSpec {
    pub fn desk(seed: u64) -> Self {
        Self {
            seed,
            grid: GridSpec::desk(),
            camera: CameraRig {
                position: [0.0, 0.0, 0.2],
                pitch: 0.12,
                focal: 32.0,
                height: 32,
                width: 64,
            },
            lidar: LidarPattern {
                origin: [0.0, 0.0, 0.4],
                azimuth_steps: 120,
                elevation_steps: 16,
                azimuth_deg: [-75.0, 75.0],
                elevation_deg: [-28.0, 4.0],
                max_range: 20.0,
            },
            objects: ObjectCounts {
                ground: true,
                cars: [0, 3],
                trucks: [0, 1],
                buildings_per_side: [0, 2],
                fences: [0, 2],
                trees: [1, 4],
                bushes: [0, 3],
                poles: [1, 3],
                sign_probability: 0.6,
            },
            sizes: SizeRanges {
                road_half_width: [1.6, 2.4],
                sidewalk_width: [1.2, 1.8],
                car_length: [3.6, 4.4],
                car_width: [1.6, 2.0],
                car_height: [1.2, 1.6],
                truck_length: [5.0, 7.0],
                truck_height: [2.2, 2.8],
                building_length: [3.0, 7.0],
                building_height: [2.0, 2.8],
                fence_length: [2.0, 5.0],
                fence_height: [0.8, 1.2],
                trunk_height: [1.0, 1.6],
                crown_radius: [0.8, 1.2],
                bush_radius: [0.5, 1.0],
                pole_height: [2.0, 2.8],
            },
            label_noise: 0.05,
        }
    }

    /// No ground and no objects.
    pub fn empty(seed: u64) -> Self {
        let mut s = Self::desk(seed);
        s.objects = ObjectCounts {
            ground: false,
            cars: [0, 0],
            trucks: [0, 0],
            buildings_per_side: [0, 0],
            fences: [0, 0],
            trees: [0, 0],
            bushes: [0, 0],
            poles: [0, 0],
            sign_probability: 0.0,
        };
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Shape {
    Cuboid { min: [f64; 3], max: [f64; 3] },
    /// Vertical cylinder.
    Cylinder { center: [f64; 2], radius: f64, z: [f64; 2] },
    Ellipsoid { center: [f64; 3], radii: [f64; 3] },
}

impl Shape {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        match self {
            Shape::Cuboid { min, max } => (0..3).all(|a| p[a] >= min[a] && p[a] < max[a]),
            Shape::Cylinder { center, radius, z } => {
                (p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2) <= radius * radius && p[2] >= z[0] && p[2] < z[1]
            }
            Shape::Ellipsoid { center, radii } => (0..3).map(|a| ((p[a] - center[a]) / radii[a]).powi(2)).sum::<f64>() <= 1.0,
        }
    }

    fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        match self {
            Shape::Cuboid { min, max } => (*min, *max),
            Shape::Cylinder { center, radius, z } => (
                [center[0] - radius, center[1] - radius, z[0]],
                [center[0] + radius, center[1] + radius, z[1]],
            ),
            Shape::Ellipsoid { center, radii } => (
                std::array::from_fn(|a| center[a] - radii[a]),
                std::array::from_fn(|a| center[a] + radii[a]),
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    pub class: u16,
}

/// Everything one frame provides.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameBundle {
    pub image: Image,
    pub cloud: PointCloud,
    /// Semantic voxel ground truth.
    pub gt: LabelGrid,
    /// Binary occupancy ground truth.
    pub geo: LabelGrid,
    /// Source segmenter IDs.
    pub primary: LabelMap,
    pub aux: Vec<AuxMask>,
    pub calib: CameraCalibration,
}

fn uniform(rng: &mut impl Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.gen_range(r[0]..r[1])
    } else {
        r[0]
    }
}

fn count(rng: &mut impl Rng, r: [usize; 2]) -> usize {
    rng.gen_range(r[0]..=r[1].max(r[0]))
}

/// Center coordinate of the voxel column containing `v` along axis `a`.
fn snap(grid: &GridSpec, a: usize, v: f64) -> f64 {
    let s = grid.voxel_size;
    grid.origin[a] + (((v - grid.origin[a]) / s).floor() + 0.5) * s
}

/// Scene layout in painting order; later primitives overwrite earlier ones.
pub fn layout(spec: &SceneSpec, rng: &mut impl Rng) -> Vec<Primitive> {
    let grid = &spec.grid;
    let sz = &spec.sizes;
    let o = &spec.objects;
    let ext = grid.extent();
    let (x_lo, x_hi) = (grid.origin[0] - 1.0, grid.origin[0] + ext[0] + 1.0);
    let (y_lo, y_hi) = (grid.origin[1] - 1.0, grid.origin[1] + ext[1] + 1.0);
    let z0 = grid.origin[2];
    let zg = z0 + grid.voxel_size;
    let mut prims = Vec::new();
    let cuboid = |min: [f64; 3], max: [f64; 3], class| Primitive {
        shape: Shape::Cuboid { min, max },
        class,
    };

    let rc = rng.gen_range(-1.0..1.0);
    let rh = uniform(rng, sz.road_half_width);
    let sw = uniform(rng, sz.sidewalk_width);
    if o.ground {
        prims.push(cuboid([x_lo, y_lo, z0], [x_hi, y_hi, zg], class::TERRAIN));
        prims.push(cuboid([x_lo, rc - rh - sw, z0], [x_hi, rc + rh + sw, zg], class::SIDEWALK));
        prims.push(cuboid([x_lo, rc - rh, z0], [x_hi, rc + rh, zg], class::ROAD));
    }
    let curb = |side: f64| rc + side * (rh + sw);

    for side in [1.0, -1.0] {
        let mut taken: Vec<[f64; 2]> = Vec::new();
        for _ in 0..count(rng, o.buildings_per_side) {
            let len = uniform(rng, sz.building_length);
            let x0 = rng.gen_range(1.0..ext[0] - 1.0);
            if taken.iter().any(|t| x0 < t[1] + 0.8 && x0 + len > t[0] - 0.8) {
                continue;
            }
            taken.push([x0, x0 + len]);
            let inner = curb(side) + side * rng.gen_range(0.4..1.6);
            let outer = if side > 0.0 { y_hi } else { y_lo };
            let h = uniform(rng, sz.building_height);
            prims.push(cuboid([x0, inner.min(outer), zg], [x0 + len, inner.max(outer), zg + h], class::BUILDING));
        }
    }
    for _ in 0..count(rng, o.fences) {
        let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let y = snap(grid, 1, curb(side) + side * 0.2);
        let x0 = rng.gen_range(1.0..ext[0] - 2.0);
        let len = uniform(rng, sz.fence_length);
        let h = uniform(rng, sz.fence_height);
        let hw = grid.voxel_size / 2.0;
        prims.push(cuboid([x0, y - hw, zg], [x0 + len, y + hw, zg + h], class::FENCE));
    }
    for _ in 0..count(rng, o.bushes) {
        let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let r = uniform(rng, sz.bush_radius);
        let center = [rng.gen_range(1.5..ext[0]), curb(side) + side * rng.gen_range(0.6..3.0), zg];
        prims.push(Primitive {
            shape: Shape::Ellipsoid {
                center,
                radii: [r, r, 0.7 * r],
            },
            class: class::VEGETATION,
        });
    }
    for _ in 0..count(rng, o.trees) {
        let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let x = snap(grid, 0, rng.gen_range(2.0..ext[0] - 0.4));
        let y = snap(grid, 1, curb(side) + side * rng.gen_range(0.4..2.4));
        let th = uniform(rng, sz.trunk_height);
        let cr = uniform(rng, sz.crown_radius);
        prims.push(Primitive {
            shape: Shape::Ellipsoid {
                center: [x, y, zg + th + 0.6 * cr],
                radii: [cr, cr, 0.8 * cr],
            },
            class: class::VEGETATION,
        });
        prims.push(Primitive {
            shape: Shape::Cylinder {
                center: [x, y],
                radius: 0.55 * grid.voxel_size,
                z: [zg, zg + th],
            },
            class: class::TRUNK,
        });
    }
    for _ in 0..count(rng, o.poles) {
        let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let x = snap(grid, 0, rng.gen_range(1.6..ext[0] - 0.4));
        let y = snap(grid, 1, curb(side) - side * sw / 2.0);
        let top = zg + uniform(rng, sz.pole_height);
        prims.push(Primitive {
            shape: Shape::Cylinder {
                center: [x, y],
                radius: 0.55 * grid.voxel_size,
                z: [zg, top],
            },
            class: class::POLE,
        });
        if rng.gen_bool(o.sign_probability) {
            let hw = grid.voxel_size / 2.0;
            let (ya, yb) = (y - side * hw, y - side * (hw + 0.8));
            prims.push(cuboid([x - hw, ya.min(yb), top - 0.8], [x + hw, ya.max(yb), top], class::SIGN));
        }
    }
    let mut parked: Vec<[f64; 4]> = Vec::new();
    let vehicles = count(rng, o.trucks);
    let cars = count(rng, o.cars);
    for (kind, n) in [(class::TRUCK, vehicles), (class::CAR, cars)] {
        for _ in 0..n {
            for _attempt in 0..10 {
                let (len, wid, h) = if kind == class::TRUCK {
                    (uniform(rng, sz.truck_length), 2.2, uniform(rng, sz.truck_height))
                } else {
                    (uniform(rng, sz.car_length), uniform(rng, sz.car_width), uniform(rng, sz.car_height))
                };
                let lane = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let yc = rc + lane * rh / 2.0;
                let x0 = rng.gen_range(3.0..ext[0] - 1.0);
                let fp = [x0, x0 + len, yc - wid / 2.0, yc + wid / 2.0];
                if parked.iter().any(|q| fp[0] < q[1] + 0.8 && fp[1] > q[0] - 0.8 && fp[2] < q[3] && fp[3] > q[2]) {
                    continue;
                }
                parked.push(fp);
                prims.push(cuboid([fp[0], fp[2], zg], [fp[1], fp[3], zg + h], kind));
                break;
            }
        }
    }
    prims
}

/// Paints primitives into the grid by voxel-center containment.
pub fn rasterize(grid: &GridSpec, prims: &[Primitive]) -> LabelGrid {
    let mut labels = LabelGrid::filled(grid.dims, FREE);
    for p in prims {
        let (lo, hi) = p.shape.bounds();
        let range = |a: usize| {
            let f = |v: f64| ((v - grid.origin[a]) / grid.voxel_size).floor();
            let start = f(lo[a]).max(0.0) as usize;
            let end = (f(hi[a]) + 1.0).clamp(0.0, grid.dims[a] as f64) as usize;
            start..end
        };
        for i in range(0) {
            for j in range(1) {
                for k in range(2) {
                    if p.shape.contains(grid.center([i, j, k])) {
                        labels.set(i, j, k, p.class);
                    }
                }
            }
        }
    }
    labels
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayHit {
    pub cell: [usize; 3],
    pub class: u16,
    /// Ray parameter where the ray enters and leaves the hit cell.
    pub t_enter: f64,
    pub t_exit: f64,
    /// Outward normal of the entry face, `None` when the ray starts inside the cell.
    pub normal: Option<[f64; 3]>,
}

/// First non-free voxel along `origin + t * dir`, `t` in `[0, max_t]`.
pub fn raycast(grid: &GridSpec, labels: &LabelGrid, origin: [f64; 3], dir: [f64; 3], max_t: f64) -> Option<RayHit> {
    let ext = grid.extent();
    let (mut t0, mut t1) = (0.0f64, max_t);
    let mut entry_axis = None;
    for a in 0..3 {
        let lo = grid.origin[a];
        let hi = lo + ext[a];
        if dir[a].abs() < 1e-15 {
            if origin[a] < lo || origin[a] >= hi {
                return None;
            }
            continue;
        }
        let (ta, tb) = ((lo - origin[a]) / dir[a], (hi - origin[a]) / dir[a]);
        let (near, far) = (ta.min(tb), ta.max(tb));
        if near > t0 {
            t0 = near;
            entry_axis = Some(a);
        }
        t1 = t1.min(far);
    }
    if t0 >= t1 {
        return None;
    }
    let p: [f64; 3] = std::array::from_fn(|a| origin[a] + t0 * dir[a]);
    let mut cell = [0isize; 3];
    let mut step = [0isize; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for a in 0..3 {
        let f = ((p[a] - grid.origin[a]) / grid.voxel_size).floor() as isize;
        cell[a] = f.clamp(0, grid.dims[a] as isize - 1);
        if dir[a] > 0.0 {
            step[a] = 1;
            let boundary = grid.origin[a] + (cell[a] + 1) as f64 * grid.voxel_size;
            t_max[a] = (boundary - origin[a]) / dir[a];
            t_delta[a] = grid.voxel_size / dir[a];
        } else if dir[a] < 0.0 {
            step[a] = -1;
            let boundary = grid.origin[a] + cell[a] as f64 * grid.voxel_size;
            t_max[a] = (boundary - origin[a]) / dir[a];
            t_delta[a] = -grid.voxel_size / dir[a];
        }
    }
    let mut t = t0;
    let normal_of = |a: usize, step: isize| {
        let mut n = [0.0; 3];
        n[a] = -step as f64;
        n
    };
    let mut normal = entry_axis.filter(|_| t0 > 0.0).map(|a| normal_of(a, step[a]));
    loop {
        let c = cell.map(|v| v as usize);
        let class = labels.get(c[0], c[1], c[2]);
        let a = (0..3).min_by(|&x, &y| t_max[x].total_cmp(&t_max[y])).unwrap();
        if class != FREE {
            return Some(RayHit {
                cell: c,
                class,
                t_enter: t,
                t_exit: t_max[a].min(t1),
                normal,
            });
        }
        t = t_max[a];
        if t > t1 {
            return None;
        }
        cell[a] += step[a];
        if cell[a] < 0 || cell[a] >= grid.dims[a] as isize {
            return None;
        }
        t_max[a] += t_delta[a];
        normal = Some(normal_of(a, step[a]));
    }
}

fn hash01(seed: u64, key: u64) -> f64 {
    let mut z = seed ^ key.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

/// Seed of frame `index` in a dataset seeded with `seed`.
pub fn frame_seed(seed: u64, index: usize) -> u64 {
    (hash01(seed, index as u64 + 1) * (1u64 << 53) as f64) as u64
}

pub fn generate_scene(spec: &SceneSpec) -> Result<FrameBundle> {
    let cam = &spec.camera;
    let calib = CameraCalibration::looking_forward(cam.position, cam.pitch, cam.focal, cam.height, cam.width)?;
    let grid = &spec.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let prims = layout(spec, &mut rng);
    let gt = rasterize(grid, &prims);
    let geo = LabelGrid::from_vec(grid.dims, gt.data().iter().map(|&c| (c != FREE) as u16).collect()).expect("same dims");

    let tints: Vec<[f64; 3]> = (0..PALETTE.len())
        .map(|_| std::array::from_fn(|_| 1.0 + rng.gen_range(-0.08..0.08)))
        .collect();
    let light = {
        let l = [0.3f64, 0.5, 0.8];
        let n = l.iter().map(|v| v * v).sum::<f64>().sqrt();
        l.map(|v| v / n)
    };
    let pixel_noise = Normal::new(0.0, 0.015).expect("finite");
    let (h, w) = (cam.height, cam.width);
    let mut image = Image::black(h, w);
    let mut primary = LabelMap::filled(h, w, source::SKY);
    let mut trunk = vec![false; h * w];
    let noise_ids = [
        source::CAR,
        source::TRUCK,
        source::ROAD,
        source::SIDEWALK,
        source::BUILDING,
        source::FENCE,
        source::VEGETATION,
        source::TERRAIN,
        source::POLE,
        source::TRAFFIC_SIGN,
    ];
    for v in 0..h {
        for u in 0..w {
            let d = calib.ray(u as f64 + 0.5, v as f64 + 0.5);
            let hit = raycast(grid, &gt, cam.position, d, 1e3);
            let mut rgb = match hit {
                Some(hit) => {
                    let shade = hit
                        .normal
                        .map_or(0.8, |n| 0.55 + 0.45 * (0..3).map(|a| n[a] * light[a]).sum::<f64>().max(0.0));
                    let key = grid.flat(hit.cell) as u64;
                    let texture = 1.0 + (hash01(spec.seed, key) - 0.5) * 0.12;
                    let c = hit.class as usize;
                    primary.set(v, u, source_id(hit.class));
                    trunk[v * w + u] = hit.class == class::TRUNK;
                    std::array::from_fn(|ch| PALETTE[c][ch] * tints[c][ch] * shade * texture)
                }
                None => {
                    let up = 1.0 - v as f64 / h as f64;
                    SKY.map(|s| s * (0.85 + 0.15 * up))
                }
            };
            rgb.iter_mut().for_each(|x| *x += pixel_noise.sample(&mut rng));
            image.set_rgb(v, u, rgb);
            if spec.label_noise > 0.0 && rng.gen_bool(spec.label_noise) {
                primary.set(v, u, noise_ids[rng.gen_range(0..noise_ids.len())]);
            }
        }
    }
    image.clamp();

    let cloud = lidar_sweep(spec, &gt, &mut rng);
    Ok(FrameBundle {
        image,
        cloud,
        gt,
        geo,
        primary,
        aux: vec![AuxMask {
            name: "trunk".into(),
            height: h,
            width: w,
            mask: trunk,
        }],
        calib,
    })
}

fn lidar_sweep(spec: &SceneSpec, gt: &LabelGrid, rng: &mut impl Rng) -> PointCloud {
    let l = &spec.lidar;
    let grid = &spec.grid;
    let lerp = |r: [f64; 2], i: usize, n: usize| {
        let f = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
        (r[0] + f * (r[1] - r[0])).to_radians()
    };
    let jitter = Normal::new(0.0, 0.02).expect("finite");
    let range_noise = Normal::new(0.0, 0.3).expect("finite");
    let mut points = Vec::new();
    for e in 0..l.elevation_steps {
        let el = lerp(l.elevation_deg, e, l.elevation_steps);
        for a in 0..l.azimuth_steps {
            let az = lerp(l.azimuth_deg, a, l.azimuth_steps);
            let d = [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()];
            let Some(hit) = raycast(grid, gt, l.origin, d, l.max_range) else {
                continue;
            };
            let frac = rng.gen_range(0.1..0.6);
            let mut t = hit.t_enter + frac * (hit.t_exit - hit.t_enter);
            let mut p: [f64; 3] = std::array::from_fn(|k| l.origin[k] + t * d[k]);
            if grid.cell_of(p) != Some(hit.cell) {
                p = grid.center(hit.cell);
            }
            if spec.label_noise > 0.0 && rng.gen_bool(spec.label_noise) {
                t += range_noise.sample(rng);
                p = std::array::from_fn(|k| l.origin[k] + t * d[k]);
            }
            let incidence = hit.normal.map_or(1.0, |n| (0..3).map(|k| -n[k] * d[k]).sum::<f64>().abs());
            let intensity = (REFLECTIVITY[hit.class as usize] + 0.15 * incidence + jitter.sample(rng)).clamp(0.0, 1.0);
            points.push([p[0], p[1], p[2], intensity]);
        }
    }
    PointCloud::new(points)
}
