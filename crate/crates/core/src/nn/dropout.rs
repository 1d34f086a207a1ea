use ndarray::{Array, Dimension, ShapeBuilder};
use rand::Rng;

/// Inverted-dropout mask: kept entries carry `1 / (1 - rate)`, dropped ones 0.
pub fn dropout_mask<D, Sh, R>(shape: Sh, rate: f64, rng: &mut R) -> Array<f64, D>
where
    D: Dimension,
    Sh: ShapeBuilder<Dim = D>,
    R: Rng + ?Sized,
{
    assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
    let keep = 1.0 / (1.0 - rate);
    Array::from_shape_simple_fn(shape, || if rng.random::<f64>() < rate { 0.0 } else { keep })
}
