//! Low-rank tensor completion built around the tensor-train (TT) rank.
//!
//! The crate provides dense N-way tensors with mode-n and prefix
//! matricizations, the matrix kernels the solvers need, two completion
//! engines (nuclear-norm shrinkage and parallel matrix factorization) with
//! TT, Tucker and square weighting schemes, ket augmentation for images and
//! videos, synthetic low-rank generators with phase-diagram sweeps, and
//! recovery metrics.
//!
//! ```
//! use ttc_core::{synthetic, SolverConfig, Scheme, Engine, metrics};
//!
//! let truth = synthetic::gen_tt_tensor(&[6, 6, 6], &[2, 2], 7).unwrap();
//! let mask = synthetic::sample_mask(&truth, 0.3, 11).unwrap();
//! let cfg = SolverConfig::new(Scheme::TensorTrain, Engine::Factorization)
//!     .with_ranks(vec![2, 2]);
//! let report = ttc_core::solve(&mask, &cfg).unwrap();
//! assert!(metrics::rse(&report.recovered, &truth).unwrap() < 1e-2);
//! ```

pub mod algorithms;
pub mod augmentation;
mod error;
pub mod linalg;
mod mask;
pub mod metrics;
mod random;
pub mod synthetic;
pub mod tensor;

pub use algorithms::{
    default_weights, init_ranks, solve, solve_factorization, solve_shrinkage, Engine, Scheme,
    SolveReport, SolverConfig, TraceEntry,
};
pub use augmentation::KaLayout;
pub use error::{Error, Result};
pub use mask::ObservationMask;
pub use metrics::QualityReport;
pub use tensor::{DenseTensor, MatricizedView, Split};

/// Matrix type used throughout the crate (column-major, `f64`).
pub type Matrix = nalgebra::DMatrix<f64>;
