//! Shared fixtures for the benchmarks.

use ttc_core::synthetic::{gen_tt_tensor, sample_mask};
use ttc_core::{DenseTensor, Matrix, ObservationMask};

/// A TT tensor of the given shape with all bond ranks equal to `rank`.
pub fn tt_tensor(shape: &[usize], rank: usize, seed: u64) -> DenseTensor {
    gen_tt_tensor(shape, &vec![rank; shape.len() - 1], seed).expect("valid generator arguments")
}

/// `tt_tensor` with a random mask at missing ratio `mr`.
pub fn masked_tt(shape: &[usize], rank: usize, mr: f64, seed: u64) -> (DenseTensor, ObservationMask) {
    let t = tt_tensor(shape, rank, seed);
    let mask = sample_mask(&t, mr, seed + 1).expect("valid missing ratio");
    (t, mask)
}

/// Deterministic dense matrix with entries in `[-1, 1]`.
pub fn test_matrix(rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |i, j| ((i * 31 + j * 17 + 7) % 97) as f64 / 48.5 - 1.0)
}
