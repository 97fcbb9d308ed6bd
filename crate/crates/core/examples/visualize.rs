//! Per-layer PPM slices and a PLY point set of a ground-truth grid.
//!
//! cargo run --example visualize -- [seed] [out_dir]

use std::path::PathBuf;

use semocc::synth::{generate_scene, SceneSpec};
use semocc::viz::write_visualization;

fn main() -> semocc::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("semocc-viz"));
    let spec = SceneSpec::desk(seed);
    let f = generate_scene(&spec)?;
    let n = write_visualization(&out, &f.gt, &spec.grid, 8)?;
    println!("wrote {n} slices and voxels.ply to {}", out.display());
    Ok(())
}
