use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use semocc::dataset::{generate_dataset, Dataset, GenerateOptions, Split};
use semocc::metrics::{ConfusionMatrix, Scores};
use semocc::taxonomy::DESK_CLASSES;
use semocc::train::{evaluate_fused, evaluate_geometry, evaluate_semantic, run_phase, GeometrySource, Model, Phase, TrainConfig};
use semocc::viz::write_visualization;

#[derive(Parser)]
#[command(version, about = "Semantic occupancy from camera and LiDAR, desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset.
    Gen {
        #[arg(long)]
        frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Validation frames; a fifth of --frames by default.
        #[arg(long)]
        val: Option<usize>,
        #[arg(long, default_value_t = 0.1)]
        label_fraction: f64,
        #[arg(long)]
        label_noise: Option<f64>,
    },
    /// Train one phase; earlier phases must have run into the same --out.
    Train {
        #[arg(long)]
        phase: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on a split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "val")]
        split: String,
        /// Score the ground truth against itself.
        #[arg(long)]
        gt_as_prediction: bool,
    },
    /// Write per-layer PPM slices and a PLY of one frame's prediction.
    Viz {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        frame: usize,
        #[arg(long, default_value = "val")]
        split: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        scale: usize,
    },
}

fn split(name: &str) -> Result<Split> {
    Split::parse(name).with_context(|| format!("unknown split `{name}`, expected train or val"))
}

/// Model from the checkpoint and the config saved next to it.
fn load_model(ckpt: &Path, data: &Dataset) -> Result<(Model, Phase)> {
    let sidecar = ckpt.with_file_name("config.toml");
    let config = TrainConfig::load(&sidecar).with_context(|| format!("reading {}", sidecar.display()))?;
    let mut model = Model::new(&config, &data.grid)?;
    model.load_checkpoint(ckpt)?;
    let phase = ckpt.file_stem().and_then(|s| s.to_str()).and_then(Phase::parse).unwrap_or(Phase::Fusion);
    Ok((model, phase))
}

fn print_scores(label: &str, s: &Scores, names: &[&str]) {
    println!("{label}: IoU {:.2} mIoU {:.2}", 100.0 * s.iou, 100.0 * s.miou);
    for (name, iou) in names.iter().zip(&s.per_class).skip(1) {
        match iou {
            Some(v) => println!("  {name:<14} {:.2}", 100.0 * v),
            None => println!("  {name:<14} -"),
        }
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Gen {
            frames,
            seed,
            out,
            val,
            label_fraction,
            label_noise,
        } => {
            let mut opts = GenerateOptions::new(frames, seed);
            opts.label_fraction = label_fraction;
            if let Some(v) = val {
                opts.val_frames = v;
            }
            if let Some(r) = label_noise {
                opts.scene.label_noise = r;
            }
            generate_dataset(&out, &opts)?;
            println!("wrote {frames} train and {} val frames to {}", opts.val_frames, out.display());
        }
        Command::Train { phase, config, data, out } => {
            let phase = Phase::parse(&phase).with_context(|| format!("unknown phase `{phase}`"))?;
            let config = match config {
                Some(p) => TrainConfig::load(&p)?,
                None => TrainConfig::default(),
            };
            let data = Dataset::load(&data)?;
            let report = run_phase(&config, &data, &out, phase)?;
            for (epoch, loss) in report.losses.iter().enumerate() {
                println!("{} epoch {} loss {loss:.5}", phase.name(), epoch + 1);
            }
            for r in &report.records {
                println!("{}", r.to_line());
            }
        }
        Command::Eval {
            ckpt,
            data,
            split: name,
            gt_as_prediction,
        } => {
            let data = Dataset::load(&data)?;
            let frames = data.split(split(&name)?);
            if frames.is_empty() {
                bail!("split `{name}` has no frames");
            }
            if gt_as_prediction {
                let mut cm = ConfusionMatrix::new(DESK_CLASSES.len());
                for f in frames {
                    cm.add(f.gt.data(), f.gt.data())?;
                }
                print_scores("ground truth", &cm.scores(), &DESK_CLASSES);
                return Ok(());
            }
            let (model, phase) = load_model(&ckpt, &data)?;
            match phase {
                Phase::Semantic => print_scores("semantic head", &evaluate_semantic(&model, frames)?, &DESK_CLASSES),
                Phase::GeoTeacher | Phase::GeoStudent => {
                    let source = if phase == Phase::GeoTeacher { GeometrySource::Teacher } else { GeometrySource::Student };
                    let s = evaluate_geometry(&model, source, frames, &data.calib)?;
                    print_scores(phase.name(), &s, &["free", "occupied"]);
                }
                Phase::Fusion => print_scores("fused", &evaluate_fused(&model, frames, &data.calib)?, &DESK_CLASSES),
            }
        }
        Command::Viz {
            ckpt,
            data,
            frame,
            split: name,
            out,
            scale,
        } => {
            let data = Dataset::load(&data)?;
            let frames = data.split(split(&name)?);
            let f = frames.iter().find(|f| f.id == frame).with_context(|| format!("no frame {frame} in split `{name}`"))?;
            let (model, _) = load_model(&ckpt, &data)?;
            let pred = model.predict(f, &data.calib)?;
            let n = write_visualization(&out, &pred, &data.grid, scale.max(1))?;
            println!("wrote {n} slices and voxels.ply to {}", out.display());
        }
    }
    Ok(())
}
