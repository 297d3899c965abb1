//! Forward pass of a loaded model, on the executor or on the oracle.
//!
//! Between layers, activations are a list of feature maps. Conv layers emit
//! one map per filter; dense and softmax layers emit a single `1 x n` row.
//! Dense and softmax layers consume the maps concatenated in order, each
//! flattened row-major.

use std::time::Instant;

use thiserror::Error;

use crate::kernels::{
    conv_launch, dense_launch, softmax_launch, Activation, AffineConfig, ConvPoolConfig,
    KernelError,
};
use crate::model::{LayerSpec, ModelError, ModelSpec};
use crate::numerics::{Grid2D, ShapeError};
use crate::oracle;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ForwardError {
    #[error("invalid model: {0}")]
    Model(#[from] ModelError),
    #[error(
        "input image is {actual_h}x{actual_w} but the model expects {expected_h}x{expected_w}"
    )]
    InputShape {
        expected_h: usize,
        expected_w: usize,
        actual_h: usize,
        actual_w: usize,
    },
    #[error("worker count must be at least 1")]
    NoWorkers,
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

impl ForwardError {
    /// True for executor faults, which indicate a kernel bug rather than bad input.
    pub fn is_fault(&self) -> bool {
        matches!(self, ForwardError::Kernel(KernelError::Fault(_)))
    }
}

impl From<ShapeError> for ForwardError {
    fn from(e: ShapeError) -> Self {
        ForwardError::Kernel(KernelError::Shape(e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    /// e.g. `layers[0].conv`
    pub name: String,
    pub outputs: Vec<Grid2D>,
    pub micros: u128,
}

/// Per-layer outputs and wall-clock timings of one forward pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ForwardTrace {
    pub layers: Vec<LayerTrace>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub confidence: f32,
}

/// How a single layer gets computed.
trait LayerEngine {
    fn conv(&self, cfg: &ConvPoolConfig) -> Result<Grid2D, ForwardError>;
    fn dense(&self, cfg: &AffineConfig, activation: Activation) -> Result<Vec<f32>, ForwardError>;
    fn softmax(&self, cfg: &AffineConfig) -> Result<Vec<f32>, ForwardError>;
}

struct Threadgroup {
    workers: usize,
}

impl LayerEngine for Threadgroup {
    fn conv(&self, cfg: &ConvPoolConfig) -> Result<Grid2D, ForwardError> {
        Ok(conv_launch(cfg)?
            .run(self.workers)
            .map_err(KernelError::from)?)
    }

    fn dense(&self, cfg: &AffineConfig, activation: Activation) -> Result<Vec<f32>, ForwardError> {
        let out = dense_launch(cfg, activation)?
            .run(self.workers)
            .map_err(KernelError::from)?;
        Ok(out.reals())
    }

    fn softmax(&self, cfg: &AffineConfig) -> Result<Vec<f32>, ForwardError> {
        let out = softmax_launch(cfg)?
            .run(self.workers)
            .map_err(KernelError::from)?;
        Ok(out.reals())
    }
}

struct Oracle;

impl LayerEngine for Oracle {
    fn conv(&self, cfg: &ConvPoolConfig) -> Result<Grid2D, ForwardError> {
        let out = oracle::conv_ref(&cfg.image, &cfg.filter)?;
        if cfg.pool {
            Ok(oracle::pool_ref(&out, cfg.bias)?)
        } else {
            Ok(out)
        }
    }

    fn dense(&self, cfg: &AffineConfig, activation: Activation) -> Result<Vec<f32>, ForwardError> {
        Ok(oracle::dense_act_ref(
            &cfg.weights,
            &cfg.input,
            &cfg.bias,
            activation,
        )?)
    }

    fn softmax(&self, cfg: &AffineConfig) -> Result<Vec<f32>, ForwardError> {
        Ok(oracle::softmax_ref(&cfg.weights, &cfg.input, &cfg.bias)?)
    }
}

fn flatten(maps: &[Grid2D]) -> Vec<f32> {
    maps.iter()
        .flat_map(|m| m.elements().iter().map(|c| c.real))
        .collect()
}

fn affine(
    rows: usize,
    cols: usize,
    weights: &[f32],
    input: Vec<f32>,
    bias: &[f32],
) -> Result<AffineConfig, ShapeError> {
    Ok(AffineConfig {
        weights: Grid2D::from_reals(rows, cols, weights)?,
        input,
        bias: bias.to_vec(),
    })
}

fn run_model(
    engine: &dyn LayerEngine,
    model: &ModelSpec,
    image: &Grid2D,
) -> Result<(Vec<f32>, ForwardTrace), ForwardError> {
    model.validate()?;
    if (image.ydim(), image.xdim()) != (model.input.height, model.input.width) {
        return Err(ForwardError::InputShape {
            expected_h: model.input.height,
            expected_w: model.input.width,
            actual_h: image.ydim(),
            actual_w: image.xdim(),
        });
    }

    let mut maps = vec![image.clone()];
    let mut trace = ForwardTrace::default();
    for (li, layer) in model.layers.iter().enumerate() {
        let start = Instant::now();
        maps = match layer {
            LayerSpec::Conv(conv) => {
                // validated: conv input is a single map
                let input = &maps[0];
                conv.filters
                    .iter()
                    .map(|f| {
                        let cfg = ConvPoolConfig {
                            image: input.clone(),
                            filter: Grid2D::from_reals(f.height, f.width, &f.weights)?,
                            bias: f.bias,
                            pool: conv.fused_pool.is_some(),
                        };
                        engine.conv(&cfg)
                    })
                    .collect::<Result<Vec<_>, _>>()?
            }
            LayerSpec::Dense(d) => {
                let cfg = affine(d.outputs, d.inputs, &d.weights, flatten(&maps), &d.bias)?;
                vec![Grid2D::row(&engine.dense(&cfg, d.activation)?)?]
            }
            LayerSpec::Softmax(s) => {
                let cfg = affine(s.classes, s.inputs, &s.weights, flatten(&maps), &s.bias)?;
                vec![Grid2D::row(&engine.softmax(&cfg)?)?]
            }
        };
        trace.layers.push(LayerTrace {
            name: format!("layers[{li}].{}", layer.kind()),
            outputs: maps.clone(),
            micros: start.elapsed().as_micros(),
        });
    }
    Ok((flatten(&maps), trace))
}

/// Runs every layer as a threadgroup program on `workers` OS threads.
pub fn forward(
    model: &ModelSpec,
    image: &Grid2D,
    workers: usize,
) -> Result<(Vec<f32>, ForwardTrace), ForwardError> {
    if workers == 0 {
        return Err(ForwardError::NoWorkers);
    }
    run_model(&Threadgroup { workers }, model, image)
}

/// The same composition using the sequential oracle kernels.
pub fn forward_oracle(model: &ModelSpec, image: &Grid2D) -> Result<Vec<f32>, ForwardError> {
    run_model(&Oracle, model, image).map(|(probs, _)| probs)
}

/// Index of the largest probability; ties go to the lowest index.
pub fn argmax(probs: &[f32]) -> Option<Prediction> {
    let mut best: Option<Prediction> = None;
    for (label, &p) in probs.iter().enumerate() {
        if best.is_none_or(|b| p > b.confidence) {
            best = Some(Prediction {
                label,
                confidence: p,
            });
        }
    }
    best
}

pub fn classify(
    model: &ModelSpec,
    image: &Grid2D,
    workers: usize,
) -> Result<Prediction, ForwardError> {
    let (probs, _) = forward(model, image, workers)?;
    Ok(argmax(&probs).expect("validated models have at least one class"))
}
