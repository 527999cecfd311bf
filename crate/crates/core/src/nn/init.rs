//! Seeded weight initialization.

use ndarray::{Array, Dimension, ShapeBuilder};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Glorot (Xavier) uniform: U[-limit, limit] with limit = sqrt(6 / (fan_in + fan_out)).
pub fn glorot_uniform<D: Dimension, Sh: ShapeBuilder<Dim = D>>(
    shape: Sh,
    fan_in: usize,
    fan_out: usize,
    rng: &mut ChaCha8Rng,
) -> Array<f64, D> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array::from_shape_simple_fn(shape, || rng.gen_range(-limit..=limit))
}
