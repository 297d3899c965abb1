//! Affine layer followed by a max-stabilized softmax, all in one threadgroup.
//!
//! Phase layout:
//! 1. `result[id] = bias[id] + sum_i weights[id][i] * input[i]`
//! 2. tree max of `result` into `softmax[0]`, published to `shared_max[0]`
//! 3. `softmax[id] = exp(result[id] - shared_max[0])`
//! 4. tree sum of `softmax` into `array_sum[0]`
//! 5. `softmax[id] /= array_sum[0]`

use super::reduce::{append_reduce_tree, ReduceOp};
use super::{names, AffineConfig, KernelLaunch};
use crate::executor::ThreadgroupProgram;
use crate::numerics::{Grid2D, ShapeError};

pub fn softmax_program(cfg: &AffineConfig) -> Result<ThreadgroupProgram, ShapeError> {
    cfg.validate()?;
    let n = cfg.outputs();
    let inputs = cfg.inputs();

    let mut p = ThreadgroupProgram::new("softmax", n);
    let weights = p.buffer(names::WEIGHTS);
    let input = p.buffer(names::INPUT);
    let bias = p.buffer(names::BIAS);
    let result = p.buffer(names::RESULT);
    let softmax = p.buffer(names::SOFTMAX);
    let array_sum = p.buffer(names::ARRAY_SUM);
    let shared_max = p.buffer(names::SHARED_MAX);

    p.phase("affine", move |t| {
        let id = t.id();
        let mut acc = t.read(bias, id)?;
        for i in 0..inputs {
            acc += t.read(weights, id * inputs + i)? * t.read(input, i)?;
        }
        t.write(result, id, acc)
    });

    append_reduce_tree(&mut p, n, ReduceOp::Max, result, softmax);

    p.phase("publish max", move |t| {
        if t.id() == 0 {
            let m = t.read(softmax, 0)?;
            t.write(shared_max, 0, m)?;
        }
        Ok(())
    });

    p.phase("exp", move |t| {
        let id = t.id();
        let e = (t.read(result, id)? - t.read(shared_max, 0)?).exp();
        t.write(softmax, id, e)
    });

    append_reduce_tree(&mut p, n, ReduceOp::Sum, softmax, array_sum);

    p.phase("normalize", move |t| {
        let id = t.id();
        let total = t.read(array_sum, 0)?;
        // the maximal logit contributes exp(0) = 1
        t.assert(total >= 1.0, || {
            format!("softmax denominator {total} is below 1")
        })?;
        let e = t.read(softmax, id)?;
        t.write(softmax, id, e / total)
    });

    Ok(p)
}

pub fn softmax_launch(cfg: &AffineConfig) -> Result<KernelLaunch, ShapeError> {
    let n = cfg.outputs();
    let buffers = cfg
        .buffers()?
        .with(names::SOFTMAX, Grid2D::zeros(1, n)?)
        .with(names::ARRAY_SUM, Grid2D::zeros(1, n)?)
        .with(names::SHARED_MAX, Grid2D::zeros(1, 1)?);
    Ok(KernelLaunch {
        program: softmax_program(cfg)?,
        buffers,
        output: names::SOFTMAX,
    })
}
