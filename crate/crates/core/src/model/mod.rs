//! The `.dlk.json` pretrained-model format.
//!
//! A model is a named input shape plus an ordered layer list. Each layer is
//! an object with exactly one key naming its kind:
//!
//! ```json
//! {
//!   "name": "mnist-demo",
//!   "input": { "height": 28, "width": 28 },
//!   "layers": [
//!     { "conv": {
//!         "filters": [ { "height": 5, "width": 5, "weights": [/* 25 */], "bias": 0.1 } ],
//!         "fused_pool": { "size": 2, "activation": "tanh" } } },
//!     { "dense": { "inputs": 144, "outputs": 64, "weights": [/* 64*144 */],
//!                  "bias": [/* 64 */], "activation": "tanh" } },
//!     { "softmax": { "inputs": 64, "classes": 10, "weights": [/* 10*64 */],
//!                    "bias": [/* 10 */] } }
//!   ]
//! }
//! ```
//!
//! Weight matrices are row-major with one row per output. A conv layer with
//! several filters produces one feature map per filter; the next layer sees
//! the maps concatenated in filter order, each flattened row-major. Conv
//! layers consume a single 2-D map, so they may only follow the input or a
//! single-filter conv layer. The last layer, and only the last, is softmax.

mod topology;

pub use topology::{generate_random_model, LayerShape, Topology, TopologyError, DEFAULT_TOPOLOGY};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::Activation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub input: InputShape,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputShape {
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerSpec {
    Conv(ConvLayer),
    Dense(DenseLayer),
    Softmax(SoftmaxLayer),
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv(_) => "conv",
            LayerSpec::Dense(_) => "dense",
            LayerSpec::Softmax(_) => "softmax",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvLayer {
    pub filters: Vec<FilterSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fused_pool: Option<FusedPool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    pub height: usize,
    pub width: usize,
    pub weights: Vec<f32>,
    /// Added before tanh in the fused pooling step.
    pub bias: f32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusedPool {
    pub size: usize,
    pub activation: PoolActivation,
}

impl Default for FusedPool {
    fn default() -> Self {
        Self {
            size: 2,
            activation: PoolActivation::Tanh,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolActivation {
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoftmaxLayer {
    pub inputs: usize,
    pub classes: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("shape error at `{path}`: {message}")]
    Shape { path: String, message: String },
    #[error("value error at `{path}`: {message}")]
    Value { path: String, message: String },
}

impl ModelError {
    pub fn path(&self) -> Option<&str> {
        match self {
            ModelError::Parse { .. } => None,
            ModelError::Schema { path, .. }
            | ModelError::Shape { path, .. }
            | ModelError::Value { path, .. } => Some(path),
        }
    }
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> ModelError {
    ModelError::Schema {
        path: path.into(),
        message: message.into(),
    }
}

fn shape(path: impl Into<String>, message: impl Into<String>) -> ModelError {
    ModelError::Shape {
        path: path.into(),
        message: message.into(),
    }
}

fn value(path: impl Into<String>, message: impl Into<String>) -> ModelError {
    ModelError::Value {
        path: path.into(),
        message: message.into(),
    }
}

/// What a layer hands to the next one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerOutput {
    /// `count` feature maps of `height x width` each.
    Maps {
        count: usize,
        height: usize,
        width: usize,
    },
    Flat(usize),
}

impl LayerOutput {
    pub fn len(&self) -> usize {
        match *self {
            LayerOutput::Maps {
                count,
                height,
                width,
            } => count * height * width,
            LayerOutput::Flat(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ConvLayer {
    /// Per-filter output dims for a `height x width` input map.
    pub fn output_dims(&self, filter: &FilterSpec, height: usize, width: usize) -> (usize, usize) {
        let (cy, cx) = (height + 1 - filter.height, width + 1 - filter.width);
        if self.fused_pool.is_some() {
            (cy / 2, cx / 2)
        } else {
            (cy, cx)
        }
    }
}

fn check_len(path: &str, what: &str, actual: usize, expected: usize) -> Result<(), ModelError> {
    if actual != expected {
        return Err(schema(
            path,
            format!("{what} has {actual} elements, expected {expected}"),
        ));
    }
    Ok(())
}

fn check_finite(path: &str, values: &[f32]) -> Result<(), ModelError> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(value(
            format!("{path}[{i}]"),
            format!("non-finite weight {}", values[i]),
        )),
        None => Ok(()),
    }
}

fn check_positive(path: &str, v: usize) -> Result<(), ModelError> {
    if v == 0 {
        return Err(value(path, "must be at least 1"));
    }
    Ok(())
}

fn check_affine(
    path: &str,
    incoming: &LayerOutput,
    inputs: usize,
    outputs: usize,
    outputs_key: &str,
    weights: &[f32],
    bias: &[f32],
) -> Result<(), ModelError> {
    check_positive(&format!("{path}.inputs"), inputs)?;
    check_positive(&format!("{path}.{outputs_key}"), outputs)?;
    if inputs != incoming.len() {
        return Err(shape(
            format!("{path}.inputs"),
            format!(
                "layer declares {inputs} inputs but the previous layer produces {} values",
                incoming.len()
            ),
        ));
    }
    check_len(
        &format!("{path}.weights"),
        "weights",
        weights.len(),
        outputs * inputs,
    )?;
    check_len(&format!("{path}.bias"), "bias", bias.len(), outputs)?;
    check_finite(&format!("{path}.weights"), weights)?;
    check_finite(&format!("{path}.bias"), bias)
}

impl ModelSpec {
    /// Checks every invariant and returns the per-layer output shapes.
    pub fn validate(&self) -> Result<Vec<LayerOutput>, ModelError> {
        validate_layers(&self.input, &self.layers, true)
    }

    pub fn classes(&self) -> usize {
        match self.layers.last() {
            Some(LayerSpec::Softmax(s)) => s.classes,
            _ => 0,
        }
    }
}

/// Validates a layer chain. With `complete` unset the chain is a prefix
/// under construction and must not contain softmax yet.
pub(crate) fn validate_layers(
    input: &InputShape,
    layers: &[LayerSpec],
    complete: bool,
) -> Result<Vec<LayerOutput>, ModelError> {
    check_positive("input.height", input.height)?;
    check_positive("input.width", input.width)?;
    if layers.is_empty() {
        return Err(schema("layers", "a model needs at least one layer"));
    }
    let last = layers.len() - 1;
    let mut current = LayerOutput::Maps {
        count: 1,
        height: input.height,
        width: input.width,
    };
    let mut shapes = Vec::with_capacity(layers.len());
    for (li, layer) in layers.iter().enumerate() {
        let path = format!("layers[{li}].{}", layer.kind());
        let is_softmax = matches!(layer, LayerSpec::Softmax(_));
        if is_softmax != (complete && li == last) {
            return Err(schema(
                path,
                if is_softmax {
                    "softmax must be the final layer"
                } else {
                    "the final layer must be softmax"
                },
            ));
        }
        current = match layer {
            LayerSpec::Conv(conv) => validate_conv(&path, conv, &current)?,
            LayerSpec::Dense(d) => {
                check_affine(
                    &path, &current, d.inputs, d.outputs, "outputs", &d.weights, &d.bias,
                )?;
                LayerOutput::Flat(d.outputs)
            }
            LayerSpec::Softmax(s) => {
                check_affine(
                    &path, &current, s.inputs, s.classes, "classes", &s.weights, &s.bias,
                )?;
                LayerOutput::Flat(s.classes)
            }
        };
        shapes.push(current.clone());
    }
    Ok(shapes)
}

fn validate_conv(
    path: &str,
    conv: &ConvLayer,
    incoming: &LayerOutput,
) -> Result<LayerOutput, ModelError> {
    let (height, width) = match *incoming {
        LayerOutput::Maps {
            count: 1,
            height,
            width,
        } => (height, width),
        ref other => {
            return Err(shape(
                path,
                format!(
                    "conv needs a single 2-D feature map as input, previous layer produces {}",
                    match other {
                        LayerOutput::Maps {
                            count,
                            height,
                            width,
                        } => format!("{count} maps of {height}x{width}"),
                        LayerOutput::Flat(n) => format!("a flat vector of {n} values"),
                    }
                ),
            ))
        }
    };
    if let Some(pool) = &conv.fused_pool {
        if pool.size != 2 {
            return Err(value(
                format!("{path}.fused_pool.size"),
                format!("only 2x2 pooling is supported, got {}", pool.size),
            ));
        }
    }
    if conv.filters.is_empty() {
        return Err(schema(
            format!("{path}.filters"),
            "at least one filter is required",
        ));
    }
    let mut dims = None;
    for (fi, f) in conv.filters.iter().enumerate() {
        let fpath = format!("{path}.filters[{fi}]");
        check_positive(&format!("{fpath}.height"), f.height)?;
        check_positive(&format!("{fpath}.width"), f.width)?;
        check_len(
            &format!("{fpath}.weights"),
            "weights",
            f.weights.len(),
            f.height * f.width,
        )?;
        check_finite(&format!("{fpath}.weights"), &f.weights)?;
        if !f.bias.is_finite() {
            return Err(value(
                format!("{fpath}.bias"),
                format!("non-finite bias {}", f.bias),
            ));
        }
        if f.height > height || f.width > width {
            return Err(shape(
                &fpath,
                format!(
                    "filter {}x{} does not fit input map {height}x{width}",
                    f.height, f.width
                ),
            ));
        }
        let (cy, cx) = (height + 1 - f.height, width + 1 - f.width);
        if conv.fused_pool.is_some() && (cy % 2 != 0 || cx % 2 != 0) {
            return Err(shape(
                &fpath,
                format!("fused 2x2 pooling needs even convolution output dims, got {cy}x{cx}"),
            ));
        }
        let out = conv.output_dims(f, height, width);
        match dims {
            None => dims = Some(out),
            Some(first) if first != out => {
                return Err(shape(
                    &fpath,
                    format!(
                        "feature map is {}x{} but filter 0 produces {}x{}",
                        out.0, out.1, first.0, first.1
                    ),
                ))
            }
            Some(_) => {}
        }
    }
    let (h, w) = dims.expect("filters is non-empty");
    Ok(LayerOutput::Maps {
        count: conv.filters.len(),
        height: h,
        width: w,
    })
}

/// Parses and fully validates a model document.
pub fn load_model(text: &str) -> Result<ModelSpec, ModelError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let spec: ModelSpec = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        match inner.classify() {
            serde_json::error::Category::Data => schema(path, strip_position(&inner)),
            // The streaming enum parser reports `{}` in a tagged position as a
            // syntax error; valid JSON gets a schema error with a path instead.
            _ => match serde_json::from_str::<serde_json::Value>(text) {
                Ok(value) => match serde_path_to_error::deserialize::<_, ModelSpec>(value) {
                    Err(e) => schema(e.path().to_string(), e.into_inner().to_string()),
                    Ok(_) => schema(path, strip_position(&inner)),
                },
                Err(_) => ModelError::Parse {
                    line: inner.line(),
                    column: inner.column(),
                    message: strip_position(&inner),
                },
            },
        }
    })?;
    spec.validate()?;
    Ok(spec)
}

/// serde_json appends " at line L column C"; we report position separately.
fn strip_position(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_owned(),
        None => msg,
    }
}

/// Serializes a model. Floats are written in their shortest round-tripping
/// decimal form, so `load_model(&save_model(m))` reproduces `m` exactly.
pub fn save_model(spec: &ModelSpec) -> String {
    let mut s = serde_json::to_string_pretty(spec).expect("model serializes");
    s.push('\n');
    s
}
