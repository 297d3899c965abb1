//! Convolutional-network inference on a simulated GPU threadgroup.
//!
//! Layer kernels ([`kernels`]) are written as barrier-separated phases over
//! shared buffers and run on a deterministic executor ([`executor`]). A
//! sequential [`oracle`] mirrors each kernel for verification, [`model`]
//! defines the JSON model format, and [`pipeline`] chains everything into a
//! forward pass.

pub mod cli;
pub mod executor;
pub mod kernels;
pub mod mnist;
pub mod model;
pub mod numerics;
pub mod oracle;
pub mod pipeline;

pub use executor::{check_races, run, BufferSet, Fault, RaceConflict, ThreadgroupProgram};
pub use model::{load_model, save_model, ModelError, ModelSpec};
pub use numerics::{ComplexScalar, Grid2D, ShapeError};
pub use pipeline::{classify, forward, forward_oracle, ForwardError, ForwardTrace, Prediction};
