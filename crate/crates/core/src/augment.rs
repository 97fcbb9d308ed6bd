//! Image and LiDAR augmentations at graded strengths.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{PointCloud, MAX_POINTS_PER_VOXEL};
use crate::image::Image;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strength {
    #[default]
    Off,
    Weak,
    Middle,
    Strong,
}

impl Strength {
    fn level(self) -> usize {
        self as usize
    }

    fn pick<T: Copy>(self, table: [T; 4]) -> T {
        table[self.level()]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPolicy {
    pub brightness: Strength,
    pub hsv: Strength,
    pub motion_blur: Strength,
    pub weather: Strength,
    pub cutout: Strength,
    pub point_dropout: Strength,
    pub dropout_regions: Strength,
    pub voxel_sampling: Strength,
}

/// Which student augmentations are active, cumulative from weak to strong.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ladder {
    Weak,
    Middle,
    Strong,
}

impl AugmentationPolicy {
    pub fn off() -> Self {
        Self::default()
    }

    /// Photometric jitter only; the point count and sampling stay untouched.
    pub fn teacher() -> Self {
        Self {
            brightness: Strength::Weak,
            hsv: Strength::Weak,
            voxel_sampling: Strength::Weak,
            ..Self::default()
        }
    }

    /// Image ops switch on by rung; the LiDAR ops all run at `lidar`.
    pub fn student(ladder: Ladder, lidar: Strength) -> Self {
        let mut p = Self {
            brightness: Strength::Strong,
            hsv: Strength::Strong,
            point_dropout: lidar,
            dropout_regions: lidar,
            voxel_sampling: lidar,
            ..Self::default()
        };
        if ladder >= Ladder::Middle {
            p.motion_blur = Strength::Middle;
            p.weather = Strength::Middle;
        }
        if ladder == Ladder::Strong {
            p.cutout = Strength::Weak;
        }
        p
    }

    pub fn dropout_probability(&self) -> f64 {
        self.point_dropout.pick([0.0, 0.1, 0.2, 0.3])
    }

    pub fn region_count(&self) -> usize {
        self.dropout_regions.pick([0, 1, 2, 3])
    }

    pub fn cutout_count(&self) -> usize {
        self.cutout.pick([0, 1, 2, 3])
    }

    /// Rows kept per voxel when voxelizing the augmented cloud.
    pub fn voxel_samples(&self) -> usize {
        self.voxel_sampling.pick([MAX_POINTS_PER_VOXEL, 24, 12, 6])
    }

    /// Per-op strength never exceeds `other`'s.
    pub fn is_subset_of(&self, other: &Self) -> bool {
        let a = self.levels();
        let b = other.levels();
        a.iter().zip(&b).all(|(x, y)| x <= y)
    }

    fn levels(&self) -> [Strength; 8] {
        [
            self.brightness,
            self.hsv,
            self.motion_blur,
            self.weather,
            self.cutout,
            self.point_dropout,
            self.dropout_regions,
            self.voxel_sampling,
        ]
    }
}

/// Zeroed rectangle: rows `top..top+height`, columns `left..left+width`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Augmented {
    pub image: Image,
    pub cloud: PointCloud,
    pub voxel_samples: usize,
    pub cutouts: Vec<Rect>,
}

/// Applies brightness, HSV shift, motion blur, weather and cutout to the
/// image in that order, then point and region dropout to the cloud.
pub fn augment(image: &Image, cloud: &PointCloud, policy: &AugmentationPolicy, seed: u64) -> Augmented {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = image.clone();
    if policy.brightness != Strength::Off {
        let a = policy.brightness.pick([0.0, 0.1, 0.2, 0.35]);
        let f = 1.0 + rng.gen_range(-a..=a);
        img.data_mut().iter_mut().for_each(|v| *v *= f);
        img.clamp();
    }
    if policy.hsv != Strength::Off {
        let hue = policy.hsv.pick([0.0, 0.03, 0.06, 0.1]);
        let sat = policy.hsv.pick([0.0, 0.1, 0.2, 0.3]);
        hsv_shift(&mut img, rng.gen_range(-hue..=hue), 1.0 + rng.gen_range(-sat..=sat));
    }
    if policy.motion_blur != Strength::Off {
        motion_blur(&mut img, policy.motion_blur.pick([1, 3, 5, 7]));
    }
    if policy.weather != Strength::Off {
        let amp = policy.weather.pick([0.0, 0.05, 0.1, 0.2]);
        let sigma = policy.weather.pick([0.0, 0.01, 0.02, 0.04]);
        weather(&mut img, amp, sigma, &mut rng);
    }
    let cutouts = cutout(&mut img, policy.cutout_count(), &mut rng);

    let p = policy.dropout_probability();
    let mut points: Vec<[f64; 4]> = if p > 0.0 {
        cloud.points.iter().copied().filter(|_| !rng.gen_bool(p)).collect()
    } else {
        cloud.points.clone()
    };
    for _ in 0..policy.region_count() {
        if points.is_empty() {
            break;
        }
        let c = points[rng.gen_range(0..points.len())];
        let r2 = 1.5f64 * 1.5;
        points.retain(|q| (0..3).map(|a| (q[a] - c[a]).powi(2)).sum::<f64>() > r2);
    }
    Augmented {
        image: img,
        cloud: PointCloud::new(points),
        voxel_samples: policy.voxel_samples(),
        cutouts,
    }
}

fn rgb_to_hsv([r, g, b]: [f64; 3]) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    [h, s, max]
}

fn hsv_to_rgb([h, s, v]: [f64; 3]) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - (h6 % 2.0 - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h6 as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r + m, g + m, b + m]
}

fn hsv_shift(img: &mut Image, hue: f64, sat: f64) {
    for r in 0..img.height() {
        for c in 0..img.width() {
            let [h, s, v] = rgb_to_hsv(img.rgb(r, c));
            img.set_rgb(r, c, hsv_to_rgb([h + hue, (s * sat).clamp(0.0, 1.0), v]));
        }
    }
}

/// Horizontal box filter of odd length `len`, clamped at the borders.
fn motion_blur(img: &mut Image, len: usize) {
    let half = (len / 2) as isize;
    let src = img.clone();
    let w = img.width() as isize;
    for ch in 0..3 {
        for r in 0..img.height() {
            for c in 0..w {
                let acc: f64 = (-half..=half)
                    .map(|d| src.get(ch, r, (c + d).clamp(0, w - 1) as usize))
                    .sum();
                img.set(ch, r, c as usize, acc / len as f64);
            }
        }
    }
}

/// Smooth luminance field from a coarse random lattice, plus pixel noise.
fn weather(img: &mut Image, amp: f64, sigma: f64, rng: &mut impl Rng) {
    let (h, w) = (img.height(), img.width());
    let lattice: Vec<f64> = (0..9).map(|_| rng.gen_range(-amp..=amp)).collect();
    let noise = Normal::new(0.0, sigma).expect("finite sigma");
    for r in 0..h {
        for c in 0..w {
            let y = r as f64 / h.max(2).saturating_sub(1) as f64 * 2.0;
            let x = c as f64 / w.max(2).saturating_sub(1) as f64 * 2.0;
            let (y0, x0) = ((y as usize).min(1), (x as usize).min(1));
            let (fy, fx) = (y - y0 as f64, x - x0 as f64);
            let at = |i: usize, j: usize| lattice[i * 3 + j];
            let field = at(y0, x0) * (1.0 - fy) * (1.0 - fx)
                + at(y0, x0 + 1) * (1.0 - fy) * fx
                + at(y0 + 1, x0) * fy * (1.0 - fx)
                + at(y0 + 1, x0 + 1) * fy * fx;
            for ch in 0..3 {
                let v = img.get(ch, r, c) + field + noise.sample(rng);
                img.set(ch, r, c, v);
            }
        }
    }
    img.clamp();
}

/// Zeroes `count` non-overlapping rectangles, each inside its own cell of a
/// 2 x 4 layout of the image.
fn cutout(img: &mut Image, count: usize, rng: &mut impl Rng) -> Vec<Rect> {
    let (h, w) = (img.height(), img.width());
    let (cell_h, cell_w) = (h / 2, w / 4);
    if count == 0 || cell_h == 0 || cell_w == 0 {
        return Vec::new();
    }
    let cells = rand::seq::index::sample(rng, 8, count.min(8)).into_vec();
    let mut rects = Vec::new();
    for cell in cells {
        let (ci, cj) = (cell / 4, cell % 4);
        let height = (cell_h * 3 / 4).max(1);
        let width = (cell_w * 3 / 4).max(1);
        let top = ci * cell_h + rng.gen_range(0..=cell_h - height);
        let left = cj * cell_w + rng.gen_range(0..=cell_w - width);
        for r in top..top + height {
            for c in left..left + width {
                img.set_rgb(r, c, [0.0; 3]);
            }
        }
        rects.push(Rect {
            top,
            left,
            height,
            width,
        });
    }
    rects
}
