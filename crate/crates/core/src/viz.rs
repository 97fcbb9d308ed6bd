//! Label grids as per-slice PPM images and coloured PLY point sets.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::Result;
use crate::formats::save_ppm;
use crate::geometry::GridSpec;
use crate::image::Image;
use crate::labels::{LabelGrid, FREE, IGNORE};
use crate::synth::PALETTE;

const FREE_RGB: [f64; 3] = [0.08, 0.08, 0.08];
const IGNORE_RGB: [f64; 3] = [1.0, 0.0, 1.0];

pub fn class_rgb(class: u16) -> [f64; 3] {
    match class {
        FREE => FREE_RGB,
        IGNORE => IGNORE_RGB,
        c => PALETTE.get(c as usize).copied().unwrap_or(IGNORE_RGB),
    }
}

/// One image per z layer, `scale` pixels per voxel. Forward (+x) points up
/// the image and left (+y) to the left.
pub fn slice_images(labels: &LabelGrid, scale: usize) -> Vec<Image> {
    let [h, w, z] = labels.dims();
    (0..z)
        .map(|k| {
            let mut img = Image::black(h * scale, w * scale);
            for i in 0..h {
                for j in 0..w {
                    let rgb = class_rgb(labels.get(i, j, k));
                    let (row, col) = ((h - 1 - i) * scale, (w - 1 - j) * scale);
                    for dr in 0..scale {
                        for dc in 0..scale {
                            img.set_rgb(row + dr, col + dc, rgb);
                        }
                    }
                }
            }
            img
        })
        .collect()
}

/// ASCII PLY of occupied voxel centers with 8-bit class colours.
pub fn ply_text(labels: &LabelGrid, grid: &GridSpec) -> String {
    let [h, w, z] = labels.dims();
    let mut body = String::new();
    let mut n = 0;
    for i in 0..h {
        for j in 0..w {
            for k in 0..z {
                let c = labels.get(i, j, k);
                if c == FREE || c == IGNORE {
                    continue;
                }
                let p = grid.center([i, j, k]);
                let rgb = class_rgb(c).map(|v| (v * 255.0).round() as u8);
                writeln!(body, "{} {} {} {} {} {} {c}", p[0], p[1], p[2], rgb[0], rgb[1], rgb[2]).unwrap();
                n += 1;
            }
        }
    }
    format!(
        "ply\nformat ascii 1.0\nelement vertex {n}\nproperty float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nproperty ushort label\nend_header\n{body}"
    )
}

/// Writes `slice_zKK.ppm` per layer and `voxels.ply`; returns the slice count.
pub fn write_visualization(dir: &Path, labels: &LabelGrid, grid: &GridSpec, scale: usize) -> Result<usize> {
    fs::create_dir_all(dir)?;
    let slices = slice_images(labels, scale);
    for (k, img) in slices.iter().enumerate() {
        save_ppm(&dir.join(format!("slice_z{k:02}.ppm")), img)?;
    }
    fs::write(dir.join("voxels.ply"), ply_text(labels, grid))?;
    Ok(slices.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slice_orientation_and_ply_count() {
        let grid = GridSpec::new([2, 3, 2], [0.0; 3], 1.0).unwrap();
        let mut labels = LabelGrid::filled([2, 3, 2], FREE);
        labels.set(1, 0, 1, 3);
        let imgs = slice_images(&labels, 1);
        assert_eq!(imgs.len(), 2);
        assert_eq!(imgs[1].rgb(0, 2), PALETTE[3]);
        assert_eq!(imgs[0].rgb(0, 2), FREE_RGB);
        let ply = ply_text(&labels, &grid);
        assert!(ply.contains("element vertex 1\n"));
        assert!(ply.ends_with("1.5 0.5 1.5 77 77 82 3\n"));
    }
}
