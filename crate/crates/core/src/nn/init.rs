//! Parameter initialization and dropout masks.

use crate::scalar::Scalar;
use ndarray::Array2;
use rand::Rng;

/// Xavier/Glorot uniform initialization.
pub fn xavier<S: Scalar, R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<S> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| S::of(rng.gen_range(-limit..limit)))
}

/// Small uniform init for embeddings.
pub fn uniform<S: Scalar, R: Rng>(rng: &mut R, rows: usize, cols: usize, limit: f64) -> Array2<S> {
    Array2::from_shape_fn((rows, cols), |_| S::of(rng.gen_range(-limit..limit)))
}

pub fn zeros<S: Scalar>(rows: usize, cols: usize) -> Array2<S> {
    Array2::zeros((rows, cols))
}

/// Inverted-dropout mask: entries are 0 with probability `p`, else 1/(1−p).
pub fn dropout_mask<S: Scalar, R: Rng>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    p: f64,
) -> Array2<S> {
    let keep = S::of(1.0 / (1.0 - p));
    Array2::from_shape_fn((rows, cols), |_| {
        if rng.gen_bool(p) {
            S::zero()
        } else {
            keep
        }
    })
}
