//! Central finite-difference gradient checks.
//!
//! The checker only evaluates the forward function, so it stays independent
//! of the backward rules it validates.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Outcome of comparing analytic and numeric gradients.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_input: usize,
    pub worst_index: usize,
}

/// Relative error with a unit floor so near-zero gradients compare absolutely.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Checks `f` (which must build a scalar) against central differences with
/// step `h` for every element of every input.
pub fn check<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| g.leaf(&t.clone().with_grad()))
        .collect();
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.constant(t)).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.scalar_value(out))
    };
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst_input: 0,
        worst_index: 0,
    };
    let mut probe = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("leaf with grad").to_vec();
        for i in 0..probe[k].numel() {
            let orig = probe[k].data()[i];
            probe[k].data_mut()[i] = orig + h;
            let up = eval(&probe)?;
            probe[k].data_mut()[i] = orig - h;
            let down = eval(&probe)?;
            probe[k].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = rel_error(analytic[i], numeric);
            if err > report.max_rel_error {
                report = GradCheck {
                    max_rel_error: err,
                    worst_input: k,
                    worst_index: i,
                };
            }
        }
    }
    Ok(report)
}
