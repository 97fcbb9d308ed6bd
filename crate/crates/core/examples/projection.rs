//! Camera geometry both ways: lift a segmentation into the voxel grid, then
//! scatter a voxel feature grid back onto the image plane.

use semocc::fusion::{scatter_project, ProjectionMode, ScatterProjector};
use semocc::geometry::lift_label_map;
use semocc::labels::{FREE, IGNORE};
use semocc::semantic::align_pseudo_labels;
use semocc::synth::{generate_scene, SceneSpec};
use semocc::taxonomy::ClassTaxonomy;
use semocc::tensor::{Graph, Tensor};

fn main() -> semocc::Result<()> {
    let spec = SceneSpec::desk(4);
    let f = generate_scene(&spec)?;
    let seg = align_pseudo_labels(&f.primary, &f.aux, &ClassTaxonomy::desk())?;

    let lifted = lift_label_map(&seg, &spec.grid, &f.calib)?;
    let labelled = lifted.data().iter().filter(|&&l| l != IGNORE).count();
    println!("{labelled} of {} voxels receive a label (sky stays ignored)", lifted.len());
    // Every voxel on a ray takes the pixel's label, so only occupied ones are comparable.
    let occupied: Vec<(u16, u16)> = lifted.data().iter().zip(f.gt.data()).filter(|(l, t)| **l != IGNORE && **t != FREE).map(|(l, t)| (*l, *t)).collect();
    let agree = occupied.iter().filter(|(l, t)| l == t).count();
    println!("on {} labelled occupied voxels the lift matches the truth {:.1}% of the time", occupied.len(), 100.0 * agree as f64 / occupied.len() as f64);

    let projector = ScatterProjector::new(&spec.grid, &f.calib.downscaled(2));
    let hits = projector.hit_counts();
    println!(
        "projector {}x{}: up to {} voxels per pixel, {} pixels hit by none",
        projector.height,
        projector.width,
        hits.iter().max().unwrap(),
        hits.iter().filter(|&&n| n == 0).count()
    );

    // A grid of ones projects to the per-pixel hit counts.
    let [h, w, z] = spec.grid.dims;
    let mut g = Graph::new();
    let ones = g.constant(&Tensor::ones(&[1, h, w, z]));
    for mode in [ProjectionMode::Plain, ProjectionMode::DistanceWeighted] {
        let p = scatter_project(&mut g, ones, &projector, mode)?;
        let total: f64 = g.value(p).iter().sum();
        println!("{mode:?}: projected mass {total:.2}");
    }
    Ok(())
}
