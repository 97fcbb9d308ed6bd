//! Fit `y = 2x - 1` with AdamW, then gradient-check the loss.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use semocc_tensor::gradcheck::check;
use semocc_tensor::{AdamW, Graph, ParamStore, Tensor};

fn main() -> semocc_tensor::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let xs = Tensor::uniform(&[1, 32], 1.0, &mut rng);
    let ys = Tensor::new(vec![1, 32], xs.data().iter().map(|x| 2.0 * x - 1.0).collect())?;

    let mut store = ParamStore::new();
    let w = store.add("w", Tensor::zeros(&[1, 1]));
    let b = store.add("b", Tensor::zeros(&[1]));
    let mut opt = AdamW::new(&store, vec![w, b], 0.05, 0.0);

    for step in 0..400 {
        let mut g = Graph::new();
        let (wv, bv) = (g.param(&store, w), g.param(&store, b));
        let x = g.constant(&xs);
        let y = g.constant(&ys);
        let wx = g.matmul(wv, x)?;
        let bb = g.expand(bv, 1, 32)?;
        let pred = g.add(wx, bb)?;
        let diff = g.sub(pred, y)?;
        let sq = g.mul(diff, diff)?;
        let loss = g.mean(sq);
        if step % 100 == 0 {
            println!("step {step:3} loss {:.6}", g.value(loss)[0]);
        }
        g.backward(loss)?.apply_to(&g, &mut store)?;
        opt.step(&mut store)?;
    }
    println!("w = {:.4}, b = {:.4}", store.get(w).data()[0], store.get(b).data()[0]);

    let report = check(&[Tensor::scalar(0.3), Tensor::scalar(-0.2)], 1e-5, |g, v| {
        let x = g.constant(&Tensor::scalar(0.7));
        let wx = g.mul(v[0], x)?;
        let p = g.add(wx, v[1])?;
        let s = g.sigmoid(p);
        Ok(g.mul(s, s)?)
    })?;
    println!("gradient check: max relative error {:.2e}", report.max_rel_error);
    Ok(())
}
