use serde::{Deserialize, Serialize};

use super::{names, KernelLaunch};
use crate::executor::{BufferSet, ThreadgroupProgram};
use crate::numerics::{tanh_f32, Grid2D, ShapeError};

/// Inputs of an affine layer: `result[k] = bias[k] + sum_i weights[k][i] * input[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineConfig {
    /// `outputs x inputs`, one row per output.
    pub weights: Grid2D,
    /// Activation vector of length `inputs`.
    pub input: Vec<f32>,
    /// Per-output bias, length `outputs`.
    pub bias: Vec<f32>,
}

impl AffineConfig {
    pub fn outputs(&self) -> usize {
        self.weights.ydim()
    }

    pub fn inputs(&self) -> usize {
        self.weights.xdim()
    }

    pub(crate) fn validate(&self) -> Result<(), ShapeError> {
        if self.input.len() != self.inputs() {
            return Err(ShapeError::Invalid(format!(
                "weight matrix has {} columns but the input has {} values",
                self.inputs(),
                self.input.len()
            )));
        }
        if self.bias.len() != self.outputs() {
            return Err(ShapeError::Invalid(format!(
                "weight matrix has {} rows but there are {} biases",
                self.outputs(),
                self.bias.len()
            )));
        }
        Ok(())
    }

    /// Buffers shared by the dense and softmax programs.
    pub(crate) fn buffers(&self) -> Result<BufferSet, ShapeError> {
        Ok(BufferSet::new()
            .with(names::WEIGHTS, self.weights.clone())
            .with(names::INPUT, Grid2D::row(&self.input)?)
            .with(names::BIAS, Grid2D::row(&self.bias)?)
            .with(names::RESULT, Grid2D::zeros(1, self.outputs())?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    None,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f32) -> f32 {
        match self {
            Activation::Tanh => tanh_f32(v),
            Activation::Relu => relu(v),
            Activation::None => v,
        }
    }
}

#[inline]
pub(crate) fn relu(v: f32) -> f32 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

/// One thread per output; each accumulates its row in ascending input order
/// starting from the bias, then applies `activation`.
pub fn dense_program(
    cfg: &AffineConfig,
    activation: Activation,
) -> Result<ThreadgroupProgram, ShapeError> {
    cfg.validate()?;
    let inputs = cfg.inputs();
    let mut p = ThreadgroupProgram::new("dense", cfg.outputs());
    let weights = p.buffer(names::WEIGHTS);
    let input = p.buffer(names::INPUT);
    let bias = p.buffer(names::BIAS);
    let result = p.buffer(names::RESULT);
    p.phase("affine+activation", move |t| {
        let id = t.id();
        let mut acc = t.read(bias, id)?;
        for i in 0..inputs {
            acc += t.read(weights, id * inputs + i)? * t.read(input, i)?;
        }
        t.write(result, id, activation.apply(acc))
    });
    Ok(p)
}

pub fn dense_tanh_program(cfg: &AffineConfig) -> Result<ThreadgroupProgram, ShapeError> {
    dense_program(cfg, Activation::Tanh)
}

pub fn dense_launch(
    cfg: &AffineConfig,
    activation: Activation,
) -> Result<KernelLaunch, ShapeError> {
    Ok(KernelLaunch {
        program: dense_program(cfg, activation)?,
        buffers: cfg.buffers()?,
        output: names::RESULT,
    })
}

/// Element-wise rectifier, `output[id] = max(0, input[id])`.
pub fn relu_program(n: usize) -> Result<ThreadgroupProgram, ShapeError> {
    if n == 0 {
        return Err(ShapeError::Invalid(
            "rectifier needs at least one element".into(),
        ));
    }
    let mut p = ThreadgroupProgram::new("relu", n);
    let input = p.buffer(names::INPUT);
    let output = p.buffer(names::OUTPUT);
    p.phase("rectify", move |t| {
        let id = t.id();
        let v = t.read(input, id)?;
        t.write(output, id, relu(v))
    });
    Ok(p)
}

pub fn relu_launch(values: &[f32]) -> Result<KernelLaunch, ShapeError> {
    Ok(KernelLaunch {
        program: relu_program(values.len())?,
        buffers: BufferSet::new()
            .with(names::INPUT, Grid2D::row(values)?)
            .with(names::OUTPUT, Grid2D::zeros(1, values.len())?),
        output: names::OUTPUT,
    })
}
