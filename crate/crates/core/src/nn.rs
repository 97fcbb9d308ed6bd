//! Parameterised layers over the autodiff graph.

use rand::Rng;
use semocc_tensor::{Graph, ParamId, ParamStore, Tensor, Var};

use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Uniform with variance suited to a following ReLU.
    He,
    /// Uniform with bound `1/sqrt(fan_in)`.
    Small,
    Zero,
}

fn weight(shape: &[usize], fan_in: usize, init: Init, rng: &mut impl Rng) -> Tensor {
    match init {
        Init::He => Tensor::uniform(shape, (6.0 / fan_in as f64).sqrt(), rng),
        Init::Small => Tensor::uniform(shape, (1.0 / fan_in as f64).sqrt(), rng),
        Init::Zero => Tensor::zeros(shape),
    }
}

/// Per-position linear map over the leading channel axis.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, init: Init, rng: &mut impl Rng) -> Self {
        let weight = store.add(&format!("{name}.weight"), weight(&[outputs, inputs], inputs, init, rng));
        let bias = Some(store.add(&format!("{name}.bias"), Tensor::zeros(&[outputs])));
        Self {
            weight,
            bias,
            inputs,
            outputs,
        }
    }

    pub fn without_bias(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, init: Init, rng: &mut impl Rng) -> Self {
        let weight = store.add(&format!("{name}.weight"), weight(&[outputs, inputs], inputs, init, rng));
        Self {
            weight,
            bias: None,
            inputs,
            outputs,
        }
    }

    /// `[inputs, ...]` to `[outputs, ...]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        let rest: usize = shape[1..].iter().product();
        let flat = g.reshape(x, &[shape[0], rest])?;
        let w = g.param(store, self.weight);
        let mut y = g.matmul(w, flat)?;
        if let Some(b) = self.bias {
            let b = g.param(store, b);
            y = g.bias_add(y, b)?;
        }
        let mut out_shape = shape;
        out_shape[0] = self.outputs;
        Ok(g.reshape(y, &out_shape)?)
    }
}

/// 3x3 2D convolution, zero padded.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
}

impl Conv2d {
    pub fn new(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, stride: usize, init: Init, rng: &mut impl Rng) -> Self {
        let w = weight(&[outputs, inputs, 3, 3], inputs * 9, init, rng);
        Self {
            weight: store.add(&format!("{name}.weight"), w),
            bias: store.add(&format!("{name}.bias"), Tensor::zeros(&[outputs])),
            stride,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        Ok(g.conv2d(x, w, b, self.stride)?)
    }
}

/// 3x3x3 3D convolution, stride 1, zero padded.
#[derive(Clone, Debug)]
pub struct Conv3d {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Conv3d {
    pub fn new(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, init: Init, rng: &mut impl Rng) -> Self {
        let w = weight(&[outputs, inputs, 3, 3, 3], inputs * 27, init, rng);
        Self {
            weight: store.add(&format!("{name}.weight"), w),
            bias: store.add(&format!("{name}.bias"), Tensor::zeros(&[outputs])),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        Ok(g.conv3d(x, w, b)?)
    }
}
