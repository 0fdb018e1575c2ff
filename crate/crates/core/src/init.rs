//! Seeded weight initializers. Every random draw in the crate flows through
//! an explicitly seeded generator, so runs are reproducible end to end.

use crate::tensor::Arr;
use ndarray::IxDyn;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn zeros(shape: &[usize]) -> Arr {
    Arr::zeros(IxDyn(shape))
}

pub fn full(shape: &[usize], v: f64) -> Arr {
    Arr::from_elem(IxDyn(shape), v)
}

/// He initialization for layers feeding rectifiers: `std = sqrt(2 / fan_in)`.
pub fn kaiming_normal(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Arr {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).unwrap();
    let n: usize = shape.iter().product();
    Arr::from_shape_vec(IxDyn(shape), (0..n).map(|_| dist.sample(rng)).collect()).unwrap()
}

/// Glorot uniform for symmetric activations.
pub fn xavier_uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Arr {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    Arr::from_shape_vec(
        IxDyn(shape),
        (0..n).map(|_| rng.random_range(-limit..limit)).collect(),
    )
    .unwrap()
}

/// Normal(0, std) with values beyond two standard deviations redrawn,
/// the usual transformer embedding/projection init.
pub fn trunc_normal(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Arr {
    let dist = Normal::new(0.0, std).unwrap();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| loop {
            let v = dist.sample(rng);
            if v.abs() <= 2.0 * std {
                break v;
            }
        })
        .collect();
    Arr::from_shape_vec(IxDyn(shape), data).unwrap()
}
