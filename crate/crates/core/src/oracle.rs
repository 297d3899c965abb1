//! Sequential scalar reference implementations of every kernel.
//!
//! Convolution and the affine layers accumulate in the same order as their
//! parallel kernels, so those agree bit-for-bit. Reductions here are plain
//! left-to-right scans, which reassociate sums relative to the tree.

use crate::kernels::{Activation, ReduceOp};
use crate::numerics::{tanh_f32, Grid2D, ShapeError};

pub fn conv_ref(image: &Grid2D, filter: &Grid2D) -> Result<Grid2D, ShapeError> {
    let (iy, ix) = (image.ydim(), image.xdim());
    let (fy, fx) = (filter.ydim(), filter.xdim());
    if fy > iy || fx > ix {
        return Err(ShapeError::Invalid(format!(
            "filter {fy}x{fx} does not fit inside image {iy}x{ix}"
        )));
    }
    let (cy, cx) = (iy - fy + 1, ix - fx + 1);
    let img = image.elements();
    let flt = filter.elements();
    let mut out = Vec::with_capacity(cy * cx);
    for y in 0..cy {
        for x in 0..cx {
            let mut acc = 0.0f32;
            for q in 0..fy {
                for r in 0..fx {
                    acc +=
                        img[(y + q) * ix + x + r].real * flt[(fy - 1 - q) * fx + (fx - 1 - r)].real;
                }
            }
            out.push(acc);
        }
    }
    Grid2D::from_reals(cy, cx, &out)
}

/// Disjoint 2x2 max-pool followed by `tanh(max + bias)`.
pub fn pool_ref(conv_out: &Grid2D, bias: f32) -> Result<Grid2D, ShapeError> {
    let (cy, cx) = (conv_out.ydim(), conv_out.xdim());
    if cy % 2 != 0 || cx % 2 != 0 {
        return Err(ShapeError::Invalid(format!(
            "2x2 pooling needs even dims, got {cy}x{cx}"
        )));
    }
    let mut out = Vec::with_capacity(cy * cx / 4);
    for py in 0..cy / 2 {
        for px in 0..cx / 2 {
            let mut m = f32::NEG_INFINITY;
            for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                m = m.max(conv_out.get(2 * py + dy, 2 * px + dx).real);
            }
            out.push(tanh_f32(m + bias));
        }
    }
    Grid2D::from_reals(cy / 2, cx / 2, &out)
}

fn check_affine(weights: &Grid2D, input: &[f32], bias: &[f32]) -> Result<(), ShapeError> {
    if weights.xdim() != input.len() || weights.ydim() != bias.len() {
        return Err(ShapeError::Invalid(format!(
            "affine shapes disagree: weights {}x{}, input {}, bias {}",
            weights.ydim(),
            weights.xdim(),
            input.len(),
            bias.len()
        )));
    }
    Ok(())
}

/// `bias[k] + sum_i weights[k][i] * input[i]`, without activation.
pub fn affine_ref(weights: &Grid2D, input: &[f32], bias: &[f32]) -> Result<Vec<f32>, ShapeError> {
    check_affine(weights, input, bias)?;
    let cols = weights.xdim();
    Ok(weights
        .elements()
        .chunks(cols)
        .zip(bias)
        .map(|(row, &b)| {
            let mut acc = b;
            for (x, &w) in row.iter().zip(input) {
                acc += x.real * w;
            }
            acc
        })
        .collect())
}

pub fn dense_ref(weights: &Grid2D, input: &[f32], bias: &[f32]) -> Result<Vec<f32>, ShapeError> {
    dense_act_ref(weights, input, bias, Activation::Tanh)
}

pub fn dense_act_ref(
    weights: &Grid2D,
    input: &[f32],
    bias: &[f32],
    activation: Activation,
) -> Result<Vec<f32>, ShapeError> {
    let mut out = affine_ref(weights, input, bias)?;
    out.iter_mut().for_each(|v| *v = activation.apply(*v));
    Ok(out)
}

/// Linear-scan reduction.
pub fn reduce_ref(values: &[f32], op: ReduceOp) -> f32 {
    let mut acc = match values.first() {
        Some(&v) => v,
        None => return op.identity(),
    };
    for &v in &values[1..] {
        acc = op.combine(acc, v);
    }
    acc
}

/// Max-stabilized softmax of raw logits.
pub fn softmax_of(logits: &[f32]) -> Vec<f32> {
    let m = reduce_ref(logits, ReduceOp::Max);
    let e: Vec<f32> = logits.iter().map(|&l| (l - m).exp()).collect();
    let total = reduce_ref(&e, ReduceOp::Sum);
    e.into_iter().map(|v| v / total).collect()
}

pub fn softmax_ref(weights: &Grid2D, input: &[f32], bias: &[f32]) -> Result<Vec<f32>, ShapeError> {
    Ok(softmax_of(&affine_ref(weights, input, bias)?))
}

pub fn relu_ref(values: &[f32]) -> Vec<f32> {
    values.iter().map(|&v| Activation::Relu.apply(v)).collect()
}
