#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tgcnn::kernels::AffineConfig;
use tgcnn::model::{generate_random_model, ModelSpec, Topology};
use tgcnn::Grid2D;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_values(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn random_grid(rng: &mut ChaCha8Rng, ydim: usize, xdim: usize) -> Grid2D {
    Grid2D::from_reals(ydim, xdim, &random_values(rng, ydim * xdim, -1.0, 1.0)).unwrap()
}

/// Overwrites every imaginary part with a random value.
pub fn seed_imag(rng: &mut ChaCha8Rng, grid: &mut Grid2D) {
    for c in grid.elements_mut() {
        c.imag = rng.random_range(-1.0e3f32..1.0e3);
    }
}

/// Identity weights so the affine result equals `logits`.
pub fn logits_config(logits: &[f32]) -> AffineConfig {
    let n = logits.len();
    let mut eye = vec![0.0; n * n];
    for i in 0..n {
        eye[i * n + i] = 1.0;
    }
    AffineConfig {
        weights: Grid2D::from_reals(n, n, &eye).unwrap(),
        input: logits.to_vec(),
        bias: vec![0.0; n],
    }
}

pub fn random_affine(rng: &mut ChaCha8Rng, outputs: usize, inputs: usize) -> AffineConfig {
    AffineConfig {
        weights: random_grid(rng, outputs, inputs),
        input: random_values(rng, inputs, -1.0, 1.0),
        bias: random_values(rng, outputs, -0.5, 0.5),
    }
}

/// A small random topology: optional conv (maybe pooled, 1-3 filters),
/// optional dense layer, then softmax.
pub fn random_topology(rng: &mut ChaCha8Rng) -> Topology {
    let h = rng.random_range(6..=16usize);
    let w = rng.random_range(6..=16usize);
    let mut parts = vec![format!("{h}x{w}")];
    if rng.random_bool(0.75) {
        let pool = rng.random_bool(0.6);
        let fit = |dim: usize, f: usize| {
            if pool && (dim - f + 1) % 2 == 1 {
                if f < dim {
                    f + 1
                } else {
                    f - 1
                }
            } else {
                f
            }
        };
        let fy = fit(h, rng.random_range(1..=5usize));
        let fx = fit(w, rng.random_range(1..=5usize));
        let filters = rng.random_range(1..=3usize);
        parts.push(format!(
            "conv{fy}x{fx}*{filters}{}",
            if pool { "+pool" } else { "" }
        ));
    }
    if rng.random_bool(0.7) {
        let act = ["tanh", "relu", "none"][rng.random_range(0..3usize)];
        parts.push(format!("dense{}:{act}", rng.random_range(4..=24usize)));
    }
    parts.push(format!("softmax{}", rng.random_range(2..=12usize)));
    parts.join(",").parse().unwrap()
}

pub fn random_model(seed: u64) -> ModelSpec {
    let mut r = rng(seed ^ 0x5eed_0000);
    let topology = random_topology(&mut r);
    generate_random_model(seed, &topology).unwrap()
}

/// Image with pixel values on the 1/255 grid, like a normalized IDX file.
pub fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Grid2D {
    let v: Vec<f32> = (0..h * w)
        .map(|_| f32::from(rng.random::<u8>()) / 255.0)
        .collect();
    Grid2D::from_reals(h, w, &v).unwrap()
}

pub fn top_two_gap(probs: &[f32]) -> f32 {
    let mut sorted = probs.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    if sorted.len() < 2 {
        f32::INFINITY
    } else {
        sorted[0] - sorted[1]
    }
}
