//! Fusion ablations from one shared student checkpoint: full model, no
//! semantic branch, no projection supervision, no voxel labels, untrained.
//! Default epochs; takes a while.
//!
//! cargo run --release --example ablation -- [train_frames] [work_dir]

use std::path::{Path, PathBuf};

use semocc::dataset::{generate_dataset, Dataset, GenerateOptions};
use semocc::train::{evaluate_fused, run_phase, Model, Phase, TrainConfig};

fn copy_dir(from: &Path, to: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(to)?;
    for e in std::fs::read_dir(from)? {
        let e = e?;
        if e.file_type()?.is_dir() {
            copy_dir(&e.path(), &to.join(e.file_name()))?;
        } else {
            std::fs::copy(e.path(), to.join(e.file_name()))?;
        }
    }
    Ok(())
}

fn main() -> semocc::Result<()> {
    let mut args = std::env::args().skip(1);
    let frames: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(60);
    let work = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("semocc-ablation"));
    let data_dir = work.join("data");
    if !data_dir.join("calib.txt").exists() {
        generate_dataset(&data_dir, &GenerateOptions::new(frames, 7))?;
    }
    let data = Dataset::load(&data_dir)?;

    let base = work.join("base");
    let config = TrainConfig::default();
    for phase in [Phase::Semantic, Phase::GeoTeacher, Phase::GeoStudent] {
        if !base.join(phase.checkpoint_name()).exists() {
            run_phase(&config, &data, &base, phase)?;
        }
    }

    let variants: [(&str, fn(&mut TrainConfig)); 4] = [
        ("full", |_| {}),
        ("no semantic branch", |c| c.use_semantic_branch = false),
        ("no projection", |c| c.use_projection = false),
        ("no voxel labels", |c| c.use_voxel_labels = false),
    ];
    for (i, (name, edit)) in variants.iter().enumerate() {
        let mut c = config.clone();
        edit(&mut c);
        let dir = work.join(format!("fusion-{i}"));
        copy_dir(&base, &dir)?;
        let r = run_phase(&c, &data, &dir, Phase::Fusion)?;
        println!("{name:<20} mIoU {:.2}", 100.0 * r.records[0].scores.miou);
    }
    let untrained = Model::new(&config, &data.grid)?;
    println!("{:<20} mIoU {:.2}", "untrained", 100.0 * evaluate_fused(&untrained, &data.val, &data.calib)?.miou);
    Ok(())
}
