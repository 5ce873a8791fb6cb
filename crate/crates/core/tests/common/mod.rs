//! Helpers shared by the integration tests.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tokdistill::numerics::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    rand::SeedableRng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fourth-order central difference of `f` around 0.
pub fn central(mut f: impl FnMut(f64) -> f64) -> f64 {
    let h = 1e-4;
    (-f(2.0 * h) + 8.0 * f(h) - 8.0 * f(-h) + f(-2.0 * h)) / (12.0 * h)
}

/// Relative error; values below `floor` are compared on an absolute scale.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest relative error between an analytic gradient and finite
/// differences of `loss` along each coordinate of `x`.
pub fn check_gradient(
    x: &Tensor<f64>,
    analytic: &[f64],
    mut loss: impl FnMut(&Tensor<f64>) -> f64,
    floor: f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate().take(x.len()) {
        let fd = central(|h| {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            loss(&xp)
        });
        worst = worst.max(rel_err(a, fd, floor));
    }
    worst
}

pub fn to_f64(t: &Tensor<f32>) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}
