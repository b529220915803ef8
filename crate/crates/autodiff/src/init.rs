use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::Tensor;

/// He-normal initialization: i.i.d. `N(0, 2 / fan_in)`.
pub fn he_normal<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    assert!(fan_in >= 1, "fan_in must be positive");
    let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
    Tensor::from_fn(shape, |_| dist.sample(rng))
}
