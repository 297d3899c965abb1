//! Layer kernels expressed as [`ThreadgroupProgram`]s.
//!
//! Each builder returns a program plus, through [`KernelLaunch`], the
//! initial buffer set it expects. Buffer names are exported as constants so
//! callers can seed or inspect individual buffers.

mod conv;
mod dense;
mod reduce;
mod softmax;

pub use conv::{conv_launch, conv_program, maxpool_tanh_phase, ConvPoolConfig};
pub use dense::{
    dense_launch, dense_program, dense_tanh_program, relu_launch, relu_program, Activation,
    AffineConfig,
};
pub use reduce::{reduce_launch, reduce_program, reduce_tree, ReduceOp};
pub use softmax::{softmax_launch, softmax_program};

use thiserror::Error;

use crate::executor::{self, BufferSet, Fault, RaceConflict, ThreadgroupProgram};
use crate::numerics::{Grid2D, ShapeError};

pub mod names {
    pub const IMAGE: &str = "image";
    pub const FILTER: &str = "filter";
    pub const CONV_OUT: &str = "conv_out";
    pub const POOL_OUT: &str = "pool_out";
    /// Weight matrix, one row per output.
    pub const WEIGHTS: &str = "weights";
    /// Input activation vector shared by every output.
    pub const INPUT: &str = "input";
    pub const BIAS: &str = "bias";
    pub const RESULT: &str = "result";
    pub const OUTPUT: &str = "output";
    pub const SOFTMAX: &str = "softmax";
    pub const ARRAY_SUM: &str = "array_sum";
    pub const SHARED_MAX: &str = "shared_max";
    pub const VALUES: &str = "values";
    pub const SCRATCH: &str = "scratch";
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Fault(#[from] Fault),
}

/// A program bundled with the buffers it runs on and the name of the buffer
/// holding its result.
#[derive(Debug)]
pub struct KernelLaunch {
    pub program: ThreadgroupProgram,
    pub buffers: BufferSet,
    pub output: &'static str,
}

impl KernelLaunch {
    /// Runs the program and returns every buffer.
    pub fn run_all(&self, workers: usize) -> Result<BufferSet, Fault> {
        executor::run(&self.program, self.buffers.clone(), workers)
    }

    /// Runs the program and returns the output buffer.
    pub fn run(&self, workers: usize) -> Result<Grid2D, Fault> {
        let mut out = self.run_all(workers)?;
        Ok(out
            .take(self.output)
            .expect("launch output buffer is declared"))
    }

    pub fn check_races(&self) -> Result<Vec<RaceConflict>, Fault> {
        executor::check_races(&self.program, self.buffers.clone())
    }
}
