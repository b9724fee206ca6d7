//! Weight initialisers. All take an explicit RNG so that a seeded model build
//! is reproducible bit for bit.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::tensor::Tensor;

/// He-normal with `std = sqrt(2 / fan)`.
pub fn kaiming_normal<R: Rng>(shape: &[usize], fan: usize, rng: &mut R) -> Tensor {
    let std = (2.0 / fan as f64).sqrt() as f32;
    let dist = Normal::new(0.0f32, std).expect("positive std");
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| dist.sample(rng)).collect())
}

/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn uniform_fan_in<R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = (1.0 / fan_in as f64).sqrt() as f32;
    let dist = Uniform::new_inclusive(-bound, bound).expect("valid bounds");
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| dist.sample(rng)).collect())
}
