//! Render one synthetic frame and print what it contains.
//!
//! cargo run --example generate_scene -- [seed] [out_dir]

use std::collections::BTreeMap;
use std::path::PathBuf;

use semocc::formats::{save_label_grid, save_ppm};
use semocc::labels::FREE;
use semocc::synth::{generate_scene, SceneSpec};
use semocc::taxonomy::DESK_CLASSES;

fn main() -> semocc::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let out = args.next().map(PathBuf::from);

    let spec = SceneSpec::desk(seed);
    let f = generate_scene(&spec)?;
    let [h, w, z] = spec.grid.dims;
    println!("grid {h}x{w}x{z} at {} m, image {}x{}", spec.grid.voxel_size, f.image.height(), f.image.width());
    println!("{} lidar returns, {} auxiliary masks", f.cloud.len(), f.aux.len());

    let mut counts = BTreeMap::new();
    for &c in f.gt.data() {
        *counts.entry(c).or_insert(0usize) += 1;
    }
    let occupied: usize = counts.iter().filter(|(c, _)| **c != FREE).map(|(_, n)| n).sum();
    println!("{occupied} occupied voxels of {}", f.gt.len());
    for (c, n) in counts {
        println!("  {:<14} {n}", DESK_CLASSES[c as usize]);
    }

    if let Some(dir) = out {
        std::fs::create_dir_all(&dir)?;
        save_ppm(&dir.join("image.ppm"), &f.image)?;
        save_label_grid(&dir.join("gt.occg"), &f.gt)?;
        println!("wrote image.ppm and gt.occg to {}", dir.display());
    }
    Ok(())
}
