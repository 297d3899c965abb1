//! Recursive-doubling tree reduction.
//!
//! The input of length `n` is treated as padded with the operation's
//! identity up to the next power of two `m`. For strides `i = 2, 4, ..., m`,
//! each thread with `id % i == 0` folds position `id + i/2` into position
//! `id`. Positions at or past `n` are padding and contribute nothing, so
//! threads whose partner lies outside the input keep their value. After the
//! last stride the reduction sits at position 0 of the scratch buffer.

use super::{names, KernelError, KernelLaunch};
use crate::executor::{BufferId, BufferSet, ThreadgroupProgram};
use crate::numerics::{Grid2D, ShapeError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Max,
    Sum,
}

impl ReduceOp {
    pub fn identity(self) -> f32 {
        match self {
            ReduceOp::Max => f32::NEG_INFINITY,
            ReduceOp::Sum => 0.0,
        }
    }

    #[inline]
    pub fn combine(self, left: f32, right: f32) -> f32 {
        match self {
            ReduceOp::Max => left.max(right),
            ReduceOp::Sum => left + right,
        }
    }

    fn label(self) -> &'static str {
        match self {
            ReduceOp::Max => "max",
            ReduceOp::Sum => "sum",
        }
    }
}

/// Appends the tree phases reducing `src[0..n]` into `scratch[0]`. The first
/// stride reads from `src`; later strides work in place on `scratch`.
pub(crate) fn append_reduce_tree(
    p: &mut ThreadgroupProgram,
    n: usize,
    op: ReduceOp,
    src: BufferId,
    scratch: BufferId,
) {
    debug_assert!(n >= 1);
    let label = op.label();
    if n == 1 {
        p.phase(format!("{label}: single element"), move |t| {
            if t.id() == 0 {
                let v = t.read(src, 0)?;
                t.write(scratch, 0, v)?;
            }
            Ok(())
        });
        return;
    }
    let padded = n.next_power_of_two();
    let mut stride = 2;
    while stride <= padded {
        let half = stride / 2;
        let from = if stride == 2 { src } else { scratch };
        p.phase(format!("{label}: stride {stride}"), move |t| {
            let id = t.id();
            if id % stride != 0 || id >= n {
                return Ok(());
            }
            if id + half < n {
                let left = t.read(from, id)?;
                let right = t.read(from, id + half)?;
                t.write(scratch, id, op.combine(left, right))?;
            } else if stride == 2 {
                // partner is padding; carry the value into scratch
                let left = t.read(from, id)?;
                t.write(scratch, id, left)?;
            }
            Ok(())
        });
        stride *= 2;
    }
}

/// Standalone reduction program over `values` (length `n`) into `scratch[0]`.
pub fn reduce_program(n: usize, op: ReduceOp) -> Result<ThreadgroupProgram, ShapeError> {
    if n == 0 {
        return Err(ShapeError::Invalid("cannot reduce an empty buffer".into()));
    }
    let mut p = ThreadgroupProgram::new(format!("reduce-{}", op.label()), n);
    let values = p.buffer(names::VALUES);
    let scratch = p.buffer(names::SCRATCH);
    append_reduce_tree(&mut p, n, op, values, scratch);
    Ok(p)
}

pub fn reduce_launch(values: &[f32], op: ReduceOp) -> Result<KernelLaunch, ShapeError> {
    Ok(KernelLaunch {
        program: reduce_program(values.len(), op)?,
        buffers: BufferSet::new()
            .with(names::VALUES, Grid2D::row(values)?)
            .with(names::SCRATCH, Grid2D::zeros(1, values.len())?),
        output: names::SCRATCH,
    })
}

/// Reduces `values` on the executor and returns the result.
pub fn reduce_tree(values: &[f32], op: ReduceOp, workers: usize) -> Result<f32, KernelError> {
    let out = reduce_launch(values, op)?.run(workers)?;
    Ok(out.elements()[0].real)
}
