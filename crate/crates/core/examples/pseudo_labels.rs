//! Confidence filtering of geometry logits and the merged supervision stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use semocc::labels::LabelGrid;
use semocc::metrics::interval_sample;
use semocc::semi::{confidence_filter, merge_supervision};
use semocc::tensor::Tensor;

fn main() -> semocc::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let logits = Tensor::uniform(&[2, 8, 8, 4], 3.0, &mut rng);
    for tau in [0.6, 0.85, 0.95] {
        let f = confidence_filter(&logits, tau)?;
        println!("tau {tau}: kept {:.1}% of voxels", 100.0 * f.kept_fraction());
    }

    let annotated = interval_sample(30, 0.1);
    println!("annotated frames at 10% of 30: {annotated:?}");
    let grid = |v| LabelGrid::filled([8, 8, 4], v);
    let labelled = annotated.iter().map(|&i| (i, grid(1))).collect();
    let pseudo = (0..30)
        .filter(|i| !annotated.contains(i))
        .map(|i| (i, confidence_filter(&logits, 0.85).map(|f| f.labels)))
        .map(|(i, l)| l.map(|l| (i, l)))
        .collect::<semocc::Result<Vec<_>>>()?;
    let stream = merge_supervision(labelled, pseudo)?;
    let first: Vec<String> = stream.iter().take(6).map(|s| format!("{}:{:?}", s.frame, s.source)).collect();
    println!("{} frames in the stream, starting {}", stream.len(), first.join(" "));

    let clash = merge_supervision(vec![(3, grid(1))], vec![(3, grid(0))]);
    println!("overlapping sets: {}", clash.unwrap_err());
    Ok(())
}
