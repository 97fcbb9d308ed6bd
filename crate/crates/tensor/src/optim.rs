use crate::error::{Result, TensorError};
use crate::params::{ParamId, ParamStore};

/// AdamW with decoupled weight decay over a fixed parameter group.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescales the joint gradient when its L2 norm exceeds this value.
    pub max_grad_norm: Option<f64>,
    params: Vec<ParamId>,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl AdamW {
    pub fn new(store: &ParamStore, params: Vec<ParamId>, learning_rate: f64, weight_decay: f64) -> Self {
        let first: Vec<Vec<f64>> = params.iter().map(|&p| vec![0.0; store.get(p).numel()]).collect();
        Self {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_grad_norm: None,
            second: first.clone(),
            first,
            params,
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn params(&self) -> &[ParamId] {
        &self.params
    }

    /// Applies one update to every parameter of the group and clears grads.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        for &p in &self.params {
            if store.get(p).grad().is_none() {
                return Err(TensorError::MissingGrad(store.name(p).to_string()));
            }
        }
        let mut clip = 1.0;
        if let Some(max) = self.max_grad_norm {
            let norm = self
                .params
                .iter()
                .flat_map(|&p| store.get(p).grad().unwrap_or(&[]).iter())
                .map(|g| g * g)
                .sum::<f64>()
                .sqrt();
            if norm > max {
                clip = max / norm;
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (slot, &p) in self.params.iter().enumerate() {
            let tensor = store.get_mut(p);
            let grad = tensor.take_grad().expect("checked above");
            let (m, v) = (&mut self.first[slot], &mut self.second[slot]);
            for (i, w) in tensor.data_mut().iter_mut().enumerate() {
                let g = grad[i] * clip;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
                *w -= self.learning_rate * (update + self.weight_decay * *w);
            }
        }
        Ok(())
    }
}
