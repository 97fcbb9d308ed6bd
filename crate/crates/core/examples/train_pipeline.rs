//! All four training phases on a small generated dataset, then fused scores.
//!
//! cargo run --release --example train_pipeline -- [train_frames] [work_dir]

use std::path::PathBuf;

use semocc::dataset::{generate_dataset, Dataset, GenerateOptions};
use semocc::taxonomy::DESK_CLASSES;
use semocc::train::{evaluate_fused, run_phase, Model, Phase, PhaseEpochs, TrainConfig};

fn main() -> semocc::Result<()> {
    let mut args = std::env::args().skip(1);
    let frames: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);
    let work = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("semocc-pipeline"));
    let data_dir = work.join("data");
    let out = work.join("run");

    generate_dataset(&data_dir, &GenerateOptions::new(frames, 7))?;
    let data = Dataset::load(&data_dir)?;
    println!("{} train frames ({} annotated), {} val", data.train.len(), data.train.iter().filter(|f| f.annotated).count(), data.val.len());

    let mut config = TrainConfig::default();
    config.epochs = PhaseEpochs {
        semantic: 3,
        teacher: 6,
        student: 4,
        fusion: 3,
    };
    for phase in Phase::ALL {
        let report = run_phase(&config, &data, &out, phase)?;
        let last = report.losses.last().copied().unwrap_or(f64::NAN);
        for r in &report.records {
            println!("{:<12} final loss {last:.4}  val IoU {:.2} mIoU {:.2}", phase.name(), 100.0 * r.scores.iou, 100.0 * r.scores.miou);
        }
    }

    let mut model = Model::new(&config, &data.grid)?;
    model.load_checkpoint(&out.join(Phase::Fusion.checkpoint_name()))?;
    let s = evaluate_fused(&model, &data.val, &data.calib)?;
    for (name, iou) in DESK_CLASSES.iter().zip(&s.per_class).skip(1) {
        match iou {
            Some(v) => println!("  {name:<14} {:.2}", 100.0 * v),
            None => println!("  {name:<14} -"),
        }
    }
    println!("checkpoints and metrics.log in {}", out.display());
    Ok(())
}
