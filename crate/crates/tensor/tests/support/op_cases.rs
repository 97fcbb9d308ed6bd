//! Finite-difference cases for every differentiable op.
//!
//! Shared by this crate's gradient tests and the workspace acceptance suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semocc_tensor::gradcheck::{check, GradCheck};
use semocc_tensor::{Graph, Result, Tensor, Var};

pub type Builder = fn(&mut Graph, &[Var]) -> Result<Var>;

pub struct OpCase {
    pub name: &'static str,
    pub shapes: Vec<Vec<usize>>,
    /// Keep sampled inputs at least this far from zero (kinks, poles).
    pub min_abs: f64,
    /// Inputs drawn from `[lo, hi]` instead of `[-1, 1]`.
    pub range: (f64, f64),
    pub build: Builder,
}

fn weighted(g: &mut Graph, v: Var) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(g.value(v).len() as u64 * 7919);
    let w = Tensor::uniform(g.shape(v), 1.0, &mut rng);
    let w = g.constant(&w);
    let p = g.mul(v, w)?;
    Ok(g.sum(p))
}

fn case(name: &'static str, shapes: &[&[usize]], build: Builder) -> OpCase {
    OpCase {
        name,
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
        min_abs: 0.0,
        range: (-1.0, 1.0),
        build,
    }
}

pub fn cases() -> Vec<OpCase> {
    let mut out = vec![
        case("add", &[&[3, 4], &[3, 4]], |g, v| { let y = g.add(v[0], v[1])?; weighted(g, y) }),
        case("sub", &[&[3, 4], &[3, 4]], |g, v| { let y = g.sub(v[0], v[1])?; weighted(g, y) }),
        case("mul", &[&[3, 4], &[3, 4]], |g, v| { let y = g.mul(v[0], v[1])?; weighted(g, y) }),
        case("scale", &[&[5]], |g, v| { let y = g.scale(v[0], -2.5); weighted(g, y) }),
        case("add_scalar", &[&[5]], |g, v| { let y = g.add_scalar(v[0], 0.7); weighted(g, y) }),
        case("sigmoid", &[&[6]], |g, v| { let y = g.sigmoid(v[0]); weighted(g, y) }),
        case("exp", &[&[6]], |g, v| { let y = g.exp(v[0]); weighted(g, y) }),
        case("tanh", &[&[6]], |g, v| { let y = g.tanh(v[0]); weighted(g, y) }),
        case("matmul", &[&[3, 4], &[4, 2]], |g, v| { let y = g.matmul(v[0], v[1])?; weighted(g, y) }),
        case("batch_matmul", &[&[2, 3, 4], &[2, 4, 2]], |g, v| { let y = g.batch_matmul(v[0], v[1])?; weighted(g, y) }),
        case("softmax", &[&[3, 4]], |g, v| { let y = g.softmax(v[0], 1)?; weighted(g, y) }),
        case("softmax_axis0", &[&[3, 2, 2]], |g, v| { let y = g.softmax(v[0], 0)?; weighted(g, y) }),
        case("log_softmax", &[&[4, 3]], |g, v| { let y = g.log_softmax(v[0], 0)?; weighted(g, y) }),
        case("sum_axis", &[&[2, 3, 4]], |g, v| { let y = g.sum_axis(v[0], 1)?; weighted(g, y) }),
        case("mean", &[&[2, 3]], |g, v| { let y = g.mean(v[0]); weighted(g, y) }),
        case("reshape", &[&[2, 6]], |g, v| { let y = g.reshape(v[0], &[3, 4])?; weighted(g, y) }),
        case("transpose", &[&[2, 5]], |g, v| { let y = g.transpose(v[0])?; weighted(g, y) }),
        case("permute", &[&[2, 3, 4]], |g, v| { let y = g.permute(v[0], &[2, 0, 1])?; weighted(g, y) }),
        case("concat", &[&[2, 3], &[1, 3]], |g, v| { let y = g.concat(&[v[0], v[1]], 0)?; weighted(g, y) }),
        case("slice", &[&[4, 3]], |g, v| { let y = g.slice(v[0], 0, 1, 2)?; weighted(g, y) }),
        case("expand", &[&[2, 3]], |g, v| { let y = g.expand(v[0], 1, 4)?; weighted(g, y) }),
        case("bias_add", &[&[3, 2, 2], &[3]], |g, v| { let y = g.bias_add(v[0], v[1])?; weighted(g, y) }),
        case("conv1d", &[&[2, 6], &[3, 2, 3], &[3]], |g, v| { let y = g.conv1d(v[0], v[1], v[2])?; weighted(g, y) }),
        case("conv2d", &[&[2, 5, 4], &[3, 2, 3, 3], &[3]], |g, v| { let y = g.conv2d(v[0], v[1], v[2], 1)?; weighted(g, y) }),
        case("conv2d_stride2", &[&[2, 5, 6], &[2, 2, 3, 3], &[2]], |g, v| { let y = g.conv2d(v[0], v[1], v[2], 2)?; weighted(g, y) }),
        case("conv3d", &[&[2, 3, 4, 3], &[2, 2, 3, 3, 3], &[2]], |g, v| { let y = g.conv3d(v[0], v[1], v[2])?; weighted(g, y) }),
        case("gather", &[&[3, 5]], |g, v| { let y = g.gather(v[0], 1, &[4, 0, 0, 2])?; weighted(g, y) }),
        case("scatter_add", &[&[2, 5]], |g, v| { let y = g.scatter_add(v[0], 1, &[1, 1, 0, 2, 1], 3)?; weighted(g, y) }),
        case("embedding", &[&[4, 3]], |g, v| { let y = g.embedding(v[0], &[3, 1, 3])?; weighted(g, y) }),
        case("avg_pool3d", &[&[2, 4, 2, 2]], |g, v| { let y = g.avg_pool3d(v[0])?; weighted(g, y) }),
        case("upsample3d", &[&[2, 2, 1, 2]], |g, v| { let y = g.upsample3d(v[0])?; weighted(g, y) }),
        case("upsample2d", &[&[2, 2, 3]], |g, v| { let y = g.upsample2d(v[0], 3, 6)?; weighted(g, y) }),
        case("selective_scan", &[&[7, 3], &[7, 3], &[7, 3], &[7, 3]], |g, v| { let y = g.selective_scan(v[0], v[1], v[2], v[3])?; weighted(g, y) }),
    ];
    let mut relu = case("relu", &[&[8]], |g, v| { let y = g.relu(v[0]); weighted(g, y) });
    relu.min_abs = 1e-3;
    out.push(relu);
    let mut div = case("div", &[&[3, 3], &[3, 3]], |g, v| { let y = g.div(v[0], v[1])?; weighted(g, y) });
    div.min_abs = 0.2;
    out.push(div);
    let mut log = case("ln", &[&[6]], |g, v| { let y = g.ln(v[0]); weighted(g, y) });
    log.range = (0.2, 2.0);
    out.push(log);
    out
}

pub fn sample(case: &OpCase, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    case.shapes
        .iter()
        .map(|s| {
            let mut t = Tensor::zeros(s);
            for v in t.data_mut() {
                *v = loop {
                    let x = rng.gen_range(case.range.0..=case.range.1);
                    if x.abs() >= case.min_abs {
                        break x;
                    }
                };
            }
            t
        })
        .collect()
}

/// Worst relative error of `case` over `instances` random draws.
pub fn run(case: &OpCase, instances: usize, seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: Option<GradCheck> = None;
    for _ in 0..instances {
        let inputs = sample(case, &mut rng);
        let r = check(&inputs, 1e-5, case.build).expect(case.name);
        if worst.as_ref().map_or(true, |w| r.max_rel_error > w.max_rel_error) {
            worst = Some(r);
        }
    }
    worst.expect("at least one instance")
}
