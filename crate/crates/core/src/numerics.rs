//! Scalar and 2-D buffer types shared by the kernels and the oracle.
//!
//! Every value is stored as a complex pair of 32-bit floats so the buffer
//! layout stays ready for a frequency-domain convolution path. Kernels only
//! ever read and write the real part; the imaginary part rides along
//! untouched.

use thiserror::Error;

/// A real/imaginary pair of `f32`. Kernels operate on `real` only.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ComplexScalar {
    pub real: f32,
    pub imag: f32,
}

impl ComplexScalar {
    pub const ZERO: ComplexScalar = ComplexScalar {
        real: 0.0,
        imag: 0.0,
    };

    pub fn from_real(real: f32) -> Self {
        Self { real, imag: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ShapeError {
    #[error("expected {expected} values for a {ydim}x{xdim} grid, got {actual}")]
    Length {
        ydim: usize,
        xdim: usize,
        expected: usize,
        actual: usize,
    },
    #[error("grid dimensions must be positive, got {ydim}x{xdim}")]
    EmptyGrid { ydim: usize, xdim: usize },
    #[error("{0}")]
    Invalid(String),
}

/// Row-major 2-D buffer of [`ComplexScalar`]. Element `(y, x)` lives at
/// flat index `y * xdim + x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    ydim: usize,
    xdim: usize,
    data: Vec<ComplexScalar>,
}

impl Grid2D {
    pub fn zeros(ydim: usize, xdim: usize) -> Result<Self, ShapeError> {
        if ydim == 0 || xdim == 0 {
            return Err(ShapeError::EmptyGrid { ydim, xdim });
        }
        Ok(Self {
            ydim,
            xdim,
            data: vec![ComplexScalar::ZERO; ydim * xdim],
        })
    }

    /// Builds a grid from row-major real values; imaginary parts are zero.
    pub fn from_reals(ydim: usize, xdim: usize, values: &[f32]) -> Result<Self, ShapeError> {
        Self::from_elements(
            ydim,
            xdim,
            values
                .iter()
                .copied()
                .map(ComplexScalar::from_real)
                .collect(),
        )
    }

    pub fn from_elements(
        ydim: usize,
        xdim: usize,
        data: Vec<ComplexScalar>,
    ) -> Result<Self, ShapeError> {
        if ydim == 0 || xdim == 0 {
            return Err(ShapeError::EmptyGrid { ydim, xdim });
        }
        if data.len() != ydim * xdim {
            return Err(ShapeError::Length {
                ydim,
                xdim,
                expected: ydim * xdim,
                actual: data.len(),
            });
        }
        Ok(Self { ydim, xdim, data })
    }

    /// A single-row grid holding `values`.
    pub fn row(values: &[f32]) -> Result<Self, ShapeError> {
        Self::from_reals(1, values.len(), values)
    }

    pub fn ydim(&self) -> usize {
        self.ydim
    }

    pub fn xdim(&self) -> usize {
        self.xdim
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, y: usize, x: usize) -> ComplexScalar {
        assert!(
            y < self.ydim && x < self.xdim,
            "({y}, {x}) outside {}x{}",
            self.ydim,
            self.xdim
        );
        self.data[y * self.xdim + x]
    }

    pub fn elements(&self) -> &[ComplexScalar] {
        &self.data
    }

    pub fn elements_mut(&mut self) -> &mut [ComplexScalar] {
        &mut self.data
    }

    /// Real parts in row-major order.
    pub fn reals(&self) -> Vec<f32> {
        self.data.iter().map(|c| c.real).collect()
    }

    pub fn imags(&self) -> Vec<f32> {
        self.data.iter().map(|c| c.imag).collect()
    }
}

/// Hyperbolic tangent at 32-bit precision.
#[inline]
pub fn tanh_f32(x: f32) -> f32 {
    x.tanh()
}
