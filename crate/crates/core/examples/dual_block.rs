//! One dual scan block: channel exchange between the semantic and geometric
//! sequences, and the identity it reduces to when its output maps are zero.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use semocc::fusion::DualBlock;
use semocc::tensor::{Graph, ParamStore, Tensor};

fn main() -> semocc::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dims = [4, 4, 4];
    let shape = [8, 4, 4, 4];
    let fs = Tensor::uniform(&shape, 1.0, &mut rng);
    let fg = Tensor::uniform(&shape, 1.0, &mut rng);

    for rho in [0.0, 0.5, 1.0] {
        let mut store = ParamStore::new();
        let block = DualBlock::new(&mut store, "blk", 8, rho, dims, dims, &mut rng);
        let mut g = Graph::new();
        let (a, b) = (g.constant(&fs), g.constant(&fg));
        let (ys, yg) = block.forward(&mut g, &store, a, b)?;
        let moved = |y: &[f64], x: &[f64]| y.iter().zip(x).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        println!(
            "rho {rho}: {} channels exchanged, max change sem {:.3} geo {:.3}",
            block.exchanged,
            moved(g.value(ys), fs.data()),
            moved(g.value(yg), fg.data())
        );

        store.get_mut(block.semantic.output.weight).data_mut().fill(0.0);
        store.get_mut(block.geometric.output.weight).data_mut().fill(0.0);
        let mut g = Graph::new();
        let (a, b) = (g.constant(&fs), g.constant(&fg));
        let (ys, yg) = block.forward(&mut g, &store, a, b)?;
        println!("  silenced outputs give the identity: {}", g.value(ys) == fs.data() && g.value(yg) == fg.data());
    }
    Ok(())
}
