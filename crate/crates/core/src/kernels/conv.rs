//! Valid-mode 2-D convolution with an optional fused 2x2 max-pool + tanh.

use super::{names, KernelLaunch};
use crate::executor::{BufferId, BufferSet, Fault, ThreadView, ThreadgroupProgram};
use crate::numerics::{tanh_f32, Grid2D, ShapeError};

/// One convolution launch: a single filter over a single-channel image.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvPoolConfig {
    pub image: Grid2D,
    pub filter: Grid2D,
    /// Scalar bias added before tanh in the pooling phase.
    pub bias: f32,
    /// Whether the fused 2x2 max-pool + tanh phase runs.
    pub pool: bool,
}

impl ConvPoolConfig {
    /// Output dims of the valid convolution, `image - filter + 1` per axis.
    pub fn conv_dims(&self) -> Result<(usize, usize), ShapeError> {
        let (iy, ix) = (self.image.ydim(), self.image.xdim());
        let (fy, fx) = (self.filter.ydim(), self.filter.xdim());
        if fy > iy || fx > ix {
            return Err(ShapeError::Invalid(format!(
                "filter {fy}x{fx} does not fit inside image {iy}x{ix}"
            )));
        }
        Ok((iy - fy + 1, ix - fx + 1))
    }

    pub fn pool_dims(&self) -> Result<(usize, usize), ShapeError> {
        let (cy, cx) = self.conv_dims()?;
        if cy % 2 != 0 || cx % 2 != 0 {
            return Err(ShapeError::Invalid(format!(
                "2x2 pooling needs even convolution output dims, got {cy}x{cx}"
            )));
        }
        Ok((cy / 2, cx / 2))
    }

    fn validate(&self) -> Result<(), ShapeError> {
        if self.pool {
            self.pool_dims().map(|_| ())
        } else {
            self.conv_dims().map(|_| ())
        }
    }
}

/// Builds the convolution program: one thread per output position. When
/// `cfg.pool` is set, a barrier follows and the same threads run
/// [`maxpool_tanh_phase`].
pub fn conv_program(cfg: &ConvPoolConfig) -> Result<ThreadgroupProgram, ShapeError> {
    cfg.validate()?;
    let (cy, cx) = cfg.conv_dims()?;
    let (fy, fx) = (cfg.filter.ydim(), cfg.filter.xdim());
    let ix = cfg.image.xdim();

    let mut p = ThreadgroupProgram::new("conv", cy * cx);
    let image = p.buffer(names::IMAGE);
    let filter = p.buffer(names::FILTER);
    let out = p.buffer(names::CONV_OUT);

    p.phase("convolve", move |t| {
        let id = t.id();
        let y = id / cx;
        let x = id % cx;
        let mut acc = 0.0f32;
        for q in 0..fy {
            let mm = fy - 1 - q;
            for r in 0..fx {
                let nn = fx - 1 - r;
                let ii = y + q;
                let jj = x + r;
                acc += t.read(image, ii * ix + jj)? * t.read(filter, mm * fx + nn)?;
            }
        }
        t.write(out, id, acc)
    });

    if cfg.pool {
        let pooled = p.buffer(names::POOL_OUT);
        p.phase("maxpool+tanh", maxpool_tanh_phase(cfg, out, pooled)?);
    }
    Ok(p)
}

/// The fused pooling phase. Threads at even `(y, x)` take the max of their
/// 2x2 window in `conv_out` and write `tanh(max + bias)` to `pool_out`;
/// every other thread writes nothing.
pub fn maxpool_tanh_phase(
    cfg: &ConvPoolConfig,
    conv_out: BufferId,
    pool_out: BufferId,
) -> Result<impl Fn(&mut ThreadView<'_>) -> Result<(), Fault> + Send + Sync + 'static, ShapeError> {
    let (_, cx) = cfg.conv_dims()?;
    let (_, px) = cfg.pool_dims()?;
    let bias = cfg.bias;
    Ok(move |t: &mut ThreadView<'_>| {
        let id = t.id();
        let y = id / cx;
        let x = id % cx;
        if y.is_multiple_of(2) && x.is_multiple_of(2) {
            let pool_pos = (y / 2) * px + x / 2;
            let v1 = t.read(conv_out, id)?.max(t.read(conv_out, id + 1)?);
            let v2 = v1.max(t.read(conv_out, id + cx)?);
            let max_pool_value = v2.max(t.read(conv_out, id + cx + 1)?);
            t.write(pool_out, pool_pos, tanh_f32(max_pool_value + bias))?;
        }
        Ok(())
    })
}

/// Program plus zero-initialized output buffers.
pub fn conv_launch(cfg: &ConvPoolConfig) -> Result<KernelLaunch, ShapeError> {
    let program = conv_program(cfg)?;
    let (cy, cx) = cfg.conv_dims()?;
    let mut buffers = BufferSet::new()
        .with(names::IMAGE, cfg.image.clone())
        .with(names::FILTER, cfg.filter.clone())
        .with(names::CONV_OUT, Grid2D::zeros(cy, cx)?);
    let output = if cfg.pool {
        let (py, px) = cfg.pool_dims()?;
        buffers.insert(names::POOL_OUT, Grid2D::zeros(py, px)?);
        names::POOL_OUT
    } else {
        names::CONV_OUT
    };
    Ok(KernelLaunch {
        program,
        buffers,
        output,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(ydim: usize, xdim: usize, v: &[f32]) -> Grid2D {
        Grid2D::from_reals(ydim, xdim, v).unwrap()
    }

    fn conv(image: Grid2D, filter: Grid2D) -> Grid2D {
        let cfg = ConvPoolConfig {
            image,
            filter,
            bias: 0.0,
            pool: false,
        };
        conv_launch(&cfg).unwrap().run(1).unwrap()
    }

    #[test]
    fn ones_count_overlap() {
        let out = conv(grid(3, 3, &[1.0; 9]), grid(2, 2, &[1.0; 4]));
        assert_eq!((out.ydim(), out.xdim()), (2, 2));
        assert_eq!(out.reals(), vec![4.0; 4]);
    }

    #[test]
    fn filter_is_flipped() {
        // 1*d + 2*c + 3*b + 4*a with a=10, b=100, c=1000, d=10000
        let out = conv(
            grid(2, 2, &[1.0, 2.0, 3.0, 4.0]),
            grid(2, 2, &[10.0, 100.0, 1000.0, 10000.0]),
        );
        assert_eq!(out.reals(), vec![10000.0 + 2000.0 + 300.0 + 40.0]);
    }

    #[test]
    fn zero_filter_annihilates() {
        let image = grid(4, 5, &(0..20).map(|v| v as f32 - 7.5).collect::<Vec<_>>());
        let out = conv(image, grid(2, 3, &[0.0; 6]));
        assert!(out.reals().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pool_of_ramp() {
        let cfg = ConvPoolConfig {
            image: grid(2, 2, &[1.0, 2.0, 3.0, 4.0]),
            filter: grid(1, 1, &[1.0]),
            bias: 0.0,
            pool: true,
        };
        let out = conv_launch(&cfg).unwrap().run(2).unwrap();
        // tanh(4) = 0.99932929973906704 (f64), nearest f32 below
        assert_eq!(out.reals(), vec![0.999_329_3]);
    }

    #[test]
    fn pool_bias_only() {
        let cfg = ConvPoolConfig {
            image: grid(2, 2, &[0.0; 4]),
            filter: grid(1, 1, &[1.0]),
            bias: 5.0,
            pool: true,
        };
        let out = conv_launch(&cfg).unwrap().run(1).unwrap();
        // tanh(5) = 0.99990920426259513
        assert!((out.reals()[0] - 0.999_909_2).abs() < 1e-7);
    }

    #[test]
    fn pool_of_constant() {
        let c = 0.3f32;
        let cfg = ConvPoolConfig {
            image: grid(4, 6, &[c; 24]),
            filter: grid(1, 1, &[1.0]),
            bias: 0.0,
            pool: true,
        };
        let out = conv_launch(&cfg).unwrap().run(3).unwrap();
        assert_eq!((out.ydim(), out.xdim()), (2, 3));
        assert!(out.reals().iter().all(|&v| v == tanh_f32(c)));
    }

    #[test]
    fn shape_errors() {
        let too_big = ConvPoolConfig {
            image: grid(2, 2, &[0.0; 4]),
            filter: grid(3, 1, &[0.0; 3]),
            bias: 0.0,
            pool: false,
        };
        assert!(conv_program(&too_big).is_err());
        let odd = ConvPoolConfig {
            image: grid(4, 4, &[0.0; 16]),
            filter: grid(2, 2, &[0.0; 4]),
            bias: 0.0,
            pool: true,
        };
        assert!(conv_program(&odd).is_err());
        assert!(conv_program(&ConvPoolConfig { pool: false, ..odd }).is_ok());
    }
}
