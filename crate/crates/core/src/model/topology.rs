//! Compact topology strings and the seeded random-model generator.
//!
//! Grammar (comma separated, input first):
//!
//! ```text
//! 28x28,conv5x5+pool,dense64:tanh,softmax10
//! 16x16,conv3x3*4,dense32:relu,softmax10
//! ```
//!
//! - `HxW` input size
//! - `convKHxKW[*F][+pool]` conv with `F` filters (default 1), optional fused 2x2 pool
//! - `denseN[:tanh|relu|none]` dense layer, tanh by default
//! - `softmaxN` final softmax over `N` classes

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{
    validate_layers, ConvLayer, DenseLayer, FilterSpec, FusedPool, InputShape, LayerOutput,
    LayerSpec, ModelError, ModelSpec, SoftmaxLayer,
};
use crate::kernels::Activation;

/// The demo MNIST topology used by the CLI when none is given.
pub const DEFAULT_TOPOLOGY: &str = "28x28,conv5x5+pool,dense64:tanh,softmax10";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerShape {
    Conv {
        height: usize,
        width: usize,
        filters: usize,
        pool: bool,
    },
    Dense {
        outputs: usize,
        activation: Activation,
    },
    Softmax {
        classes: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    pub input: InputShape,
    pub layers: Vec<LayerShape>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("bad topology token `{token}`: {reason}")]
pub struct TopologyError {
    pub token: String,
    pub reason: String,
}

fn bad(token: &str, reason: impl Into<String>) -> TopologyError {
    TopologyError {
        token: token.to_owned(),
        reason: reason.into(),
    }
}

fn count(token: &str, s: &str) -> Result<usize, TopologyError> {
    match s.parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(bad(token, format!("`{s}` is not a positive integer"))),
    }
}

fn dims(token: &str, s: &str) -> Result<(usize, usize), TopologyError> {
    let (h, w) = s
        .split_once('x')
        .ok_or_else(|| bad(token, "expected HxW"))?;
    Ok((count(token, h)?, count(token, w)?))
}

impl FromStr for Topology {
    type Err = TopologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut tokens = s.split(',').map(str::trim);
        let first = tokens.next().unwrap_or_default();
        let (height, width) = dims(first, first)?;
        let mut layers = Vec::new();
        for token in tokens {
            let layer = if let Some(rest) = token.strip_prefix("conv") {
                let (rest, pool) = match rest.strip_suffix("+pool") {
                    Some(r) => (r, true),
                    None => (rest, false),
                };
                let (size, filters) = match rest.split_once('*') {
                    Some((size, f)) => (size, count(token, f)?),
                    None => (rest, 1),
                };
                let (height, width) = dims(token, size)?;
                LayerShape::Conv {
                    height,
                    width,
                    filters,
                    pool,
                }
            } else if let Some(rest) = token.strip_prefix("dense") {
                let (n, act) = rest.split_once(':').unwrap_or((rest, "tanh"));
                let activation = match act {
                    "tanh" => Activation::Tanh,
                    "relu" => Activation::Relu,
                    "none" => Activation::None,
                    other => return Err(bad(token, format!("unknown activation `{other}`"))),
                };
                LayerShape::Dense {
                    outputs: count(token, n)?,
                    activation,
                }
            } else if let Some(rest) = token.strip_prefix("softmax") {
                LayerShape::Softmax {
                    classes: count(token, rest)?,
                }
            } else {
                return Err(bad(token, "expected conv, dense or softmax"));
            };
            layers.push(layer);
        }
        Ok(Topology {
            input: InputShape { height, width },
            layers,
        })
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.input.height, self.input.width)?;
        for layer in &self.layers {
            match layer {
                LayerShape::Conv {
                    height,
                    width,
                    filters,
                    pool,
                } => {
                    write!(f, ",conv{height}x{width}")?;
                    if *filters != 1 {
                        write!(f, "*{filters}")?;
                    }
                    if *pool {
                        write!(f, "+pool")?;
                    }
                }
                LayerShape::Dense {
                    outputs,
                    activation,
                } => {
                    let act = match activation {
                        Activation::Tanh => "tanh",
                        Activation::Relu => "relu",
                        Activation::None => "none",
                    };
                    write!(f, ",dense{outputs}:{act}")?;
                }
                LayerShape::Softmax { classes } => write!(f, ",softmax{classes}")?,
            }
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-0.5f32..=0.5)).collect()
}

/// Builds a model with the given topology and weights drawn uniformly from
/// `[-0.5, 0.5]`. The same seed always yields the same model.
pub fn generate_random_model(seed: u64, topology: &Topology) -> Result<ModelSpec, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut current = LayerOutput::Maps {
        count: 1,
        height: topology.input.height,
        width: topology.input.width,
    };
    let mut layers = Vec::with_capacity(topology.layers.len());
    for (li, shape) in topology.layers.iter().enumerate() {
        let layer = match *shape {
            LayerShape::Conv {
                height,
                width,
                filters,
                pool,
            } => {
                let filters = (0..filters)
                    .map(|_| FilterSpec {
                        height,
                        width,
                        weights: uniform(&mut rng, height * width),
                        bias: rng.random_range(-0.5f32..=0.5),
                    })
                    .collect();
                LayerSpec::Conv(ConvLayer {
                    filters,
                    fused_pool: pool.then(FusedPool::default),
                })
            }
            LayerShape::Dense {
                outputs,
                activation,
            } => LayerSpec::Dense(DenseLayer {
                inputs: current.len(),
                outputs,
                weights: uniform(&mut rng, outputs * current.len()),
                bias: uniform(&mut rng, outputs),
                activation,
            }),
            LayerShape::Softmax { classes } => LayerSpec::Softmax(SoftmaxLayer {
                inputs: current.len(),
                classes,
                weights: uniform(&mut rng, classes * current.len()),
                bias: uniform(&mut rng, classes),
            }),
        };
        let is_final = li + 1 == topology.layers.len();
        layers.push(layer);
        if !is_final {
            let shapes = validate_layers(&topology.input, &layers, false)?;
            current = shapes[li].clone();
        }
    }
    let spec = ModelSpec {
        name: format!("random-{seed}"),
        input: topology.input,
        layers,
    };
    spec.validate()?;
    Ok(spec)
}
