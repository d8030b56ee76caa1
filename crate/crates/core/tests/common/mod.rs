#![allow(dead_code)]

use ndarray::{Array2, Array3};
use phasefd::{Instance, QGrid, Sample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Instance whose columns are the columns of `a`, on a geometric grid so the
/// log resampling is the identity.
pub fn instance_from_matrix(a: &Array2<f64>) -> Instance {
    let q = QGrid::geometric(1.0, 1.0 + 0.01 * a.nrows() as f64, a.nrows()).unwrap();
    let samples = (0..a.ncols())
        .map(|j| Sample {
            id: format!("s{j}"),
            composition: vec![1.0],
            intensity: a.column(j).to_vec(),
        })
        .collect();
    Instance::new(vec!["X".into()], q, samples).unwrap()
}

/// Basis columns made of a few Gaussian bumps.
pub fn peaky_basis(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut w = Array2::zeros((n, k));
    for kk in 0..k {
        for _ in 0..3 {
            let c = rng.random_range(0.1..0.8) * n as f64;
            let amp = rng.random_range(0.3..1.0);
            for row in 0..n {
                let d = (row as f64 - c) / 1.5;
                w[[row, kk]] += amp * (-0.5 * d * d).exp();
            }
        }
    }
    w
}

pub fn random_matrix(shape: (usize, usize), rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.random_range(0.0..1.0))
}

pub fn random_tensor(shape: (usize, usize, usize), rng: &mut ChaCha8Rng) -> Array3<f64> {
    Array3::from_shape_simple_fn(shape, || rng.random_range(0.0..1.0))
}

pub fn max_rel_diff(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-300))
        .fold(0.0, f64::max)
}
