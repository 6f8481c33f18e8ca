//! Deterministic weight initialization.

use ndarray::ArrayD;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Scalar;

/// Standard normal draw via Box-Muller, generated in f64 so f32 and f64
/// models initialized from the same seed agree to rounding.
pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u1: f64 = rng.gen::<f64>();
        let u2: f64 = rng.gen::<f64>();
        if u1 > f64::MIN_POSITIVE {
            return (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        }
    }
}

/// He (Kaiming) normal initialization: std = sqrt(2 / fan_in).
pub fn he_normal<F: Scalar>(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> ArrayD<F> {
    let std = (2.0 / fan_in as f64).sqrt();
    ArrayD::from_shape_simple_fn(ndarray::IxDyn(shape), || {
        F::from_f64(standard_normal(rng) * std)
    })
}
