//! Completion solvers.
//!
//! Two engines share one configuration type:
//!
//! * [`Engine::Shrinkage`] minimizes a weighted sum of nuclear norms by block
//!   coordinate descent, soft-thresholding the singular values of each
//!   penalized matricization and averaging the folded results
//!   (SiLRTC family).
//! * [`Engine::Factorization`] fits every penalized matricization with a
//!   fixed-rank product `U V` by alternating least squares and averages the
//!   folded products (TMac family).
//!
//! The [`Scheme`] picks which matricizations are penalized: all prefix
//! splits (tensor train), all mode-n unfoldings (Tucker), or only the most
//! balanced prefix split (square).

mod factorization;
mod ranks;
mod shrinkage;

use std::fmt;
use std::str::FromStr;

pub use factorization::solve_factorization;
pub use ranks::init_ranks;
pub use shrinkage::solve_shrinkage;

use crate::error::{Error, Result};
use crate::mask::ObservationMask;
use crate::tensor::{fold_matrix, DenseTensor, Split};
use nalgebra::{DMatrix, DMatrixView};

/// Candidate values for the `f` sweep.
pub const PENALTY_FACTORS: [f64; 5] = [0.01, 0.05, 0.1, 0.5, 1.0];

/// Candidate values for the `th` sweep of the factorization engine.
pub const RANK_THRESHOLDS: [f64; 4] = [0.1, 0.3, 0.5, 0.7];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// Prefix splits `k = 1..N-1`.
    TensorTrain,
    /// Mode-n unfoldings `n = 1..N`.
    Tucker,
    /// Only the prefix split `k = round(N/2)`.
    Square,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Engine {
    Shrinkage,
    Factorization,
}

impl Scheme {
    /// All matricizations the scheme is defined over, in update order.
    pub fn splits(&self, order: usize) -> Vec<Split> {
        match self {
            Scheme::TensorTrain | Scheme::Square => (1..order).map(Split::Prefix).collect(),
            Scheme::Tucker => (1..=order).map(Split::ModeN).collect(),
        }
    }
}

/// `round(N/2)` with halves rounded up.
pub fn square_split(order: usize) -> usize {
    order.div_ceil(2)
}

/// Default weights `alpha` for a shape under a scheme.
///
/// Tensor train: `alpha_k ~ min(prod_{l<=k} I_l, prod_{l>k} I_l)`, favouring
/// balanced splits. Tucker: `alpha_k ~ I_k`. Square: one-hot at
/// `k = round(N/2)`.
pub fn default_weights(shape: &[usize], scheme: Scheme) -> Result<Vec<f64>> {
    let order = shape.len();
    if order < 2 {
        return Err(Error::arg(format!(
            "completion needs an order >= 2 tensor, got shape {shape:?}"
        )));
    }
    let raw: Vec<f64> = match scheme {
        Scheme::TensorTrain => (1..order)
            .map(|k| {
                let left: f64 = shape[..k].iter().map(|&d| d as f64).product();
                let right: f64 = shape[k..].iter().map(|&d| d as f64).product();
                left.min(right)
            })
            .collect(),
        Scheme::Tucker => shape.iter().map(|&d| d as f64).collect(),
        Scheme::Square => {
            let hot = square_split(order);
            (1..order).map(|k| if k == hot { 1.0 } else { 0.0 }).collect()
        }
    };
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub scheme: Scheme,
    pub engine: Engine,
    /// Overrides [`default_weights`]; must sum to one.
    pub weights: Option<Vec<f64>>,
    /// `f` in `beta_k = f * alpha_k` (shrinkage engine).
    pub penalty_factor: f64,
    /// Ratio threshold for initial rank estimation (factorization engine).
    pub rank_threshold: f64,
    /// Overrides rank estimation; one entry per split of the scheme.
    pub ranks: Option<Vec<usize>>,
    /// Stop once `||X^{l+1} - X^l||_F / ||T_Omega||_F <= tol`.
    pub tol: f64,
    pub max_iter: usize,
    /// Seeds the random initial factors.
    pub seed: u64,
}

impl SolverConfig {
    pub fn new(scheme: Scheme, engine: Engine) -> Self {
        Self {
            scheme,
            engine,
            weights: None,
            penalty_factor: 0.1,
            rank_threshold: 0.01,
            ranks: None,
            tol: 1e-4,
            max_iter: 1000,
            seed: 0,
        }
    }

    /// Configuration for a named algorithm such as `"tmac-tt"`.
    pub fn preset(name: &str) -> Result<Self> {
        let algo: Algorithm = name.parse()?;
        Ok(Self::new(algo.scheme, algo.engine))
    }

    pub fn algorithm(&self) -> Algorithm {
        Algorithm {
            scheme: self.scheme,
            engine: self.engine,
        }
    }

    pub fn with_weights(mut self, w: Vec<f64>) -> Self {
        self.weights = Some(w);
        self
    }

    pub fn with_ranks(mut self, r: Vec<usize>) -> Self {
        self.ranks = Some(r);
        self
    }

    pub fn with_penalty_factor(mut self, f: f64) -> Self {
        self.penalty_factor = f;
        self
    }

    pub fn with_rank_threshold(mut self, th: f64) -> Self {
        self.rank_threshold = th;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, n: usize) -> Self {
        self.max_iter = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Validated weights for a shape (explicit override or defaults).
    pub fn resolve_weights(&self, shape: &[usize]) -> Result<Vec<f64>> {
        let order = shape.len();
        let expected = self.scheme.splits(order).len();
        let w = match &self.weights {
            Some(w) => w.clone(),
            None => default_weights(shape, self.scheme)?,
        };
        if order < 2 {
            return Err(Error::arg("completion needs an order >= 2 tensor"));
        }
        if w.len() != expected {
            return Err(Error::arg(format!(
                "{} weights given, scheme needs {expected}",
                w.len()
            )));
        }
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::arg("weights must be finite and nonnegative"));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::arg(format!("weights sum to {sum}, not 1")));
        }
        if self.scheme == Scheme::Square {
            let hot = square_split(order);
            let one_hot = w
                .iter()
                .enumerate()
                .all(|(i, &x)| if i + 1 == hot { x == 1.0 } else { x == 0.0 });
            if !one_hot {
                return Err(Error::arg(format!(
                    "square scheme requires weight 1 at split {hot} and 0 elsewhere"
                )));
            }
        }
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.penalty_factor > 0.0 && self.penalty_factor.is_finite()) {
            return Err(Error::arg(format!(
                "penalty factor must be positive, got {}",
                self.penalty_factor
            )));
        }
        if !(self.rank_threshold > 0.0 && self.rank_threshold < 1.0) {
            return Err(Error::arg(format!(
                "rank threshold must lie in (0, 1), got {}",
                self.rank_threshold
            )));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::arg(format!("tolerance must be nonnegative, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::arg("max_iter must be at least 1"));
        }
        Ok(())
    }

    /// The splits that carry nonzero weight, paired with their weights.
    pub(crate) fn active_splits(&self, shape: &[usize]) -> Result<Vec<(usize, Split, f64)>> {
        let w = self.resolve_weights(shape)?;
        Ok(self
            .scheme
            .splits(shape.len())
            .into_iter()
            .zip(w)
            .enumerate()
            .filter(|(_, (_, a))| *a > 0.0)
            .map(|(i, (s, a))| (i, s, a))
            .collect())
    }
}

/// A (scheme, engine) pair with the conventional algorithm name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Algorithm {
    pub scheme: Scheme,
    pub engine: Engine,
}

impl Algorithm {
    pub const ALL: [&'static str; 6] = [
        "silrtc",
        "silrtc-tt",
        "silrtc-square",
        "tmac",
        "tmac-tt",
        "tmac-square",
    ];
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let engine = match self.engine {
            Engine::Shrinkage => "silrtc",
            Engine::Factorization => "tmac",
        };
        match self.scheme {
            Scheme::Tucker => write!(f, "{engine}"),
            Scheme::TensorTrain => write!(f, "{engine}-tt"),
            Scheme::Square => write!(f, "{engine}-square"),
        }
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        let (engine, rest) = if let Some(rest) = lower.strip_prefix("silrtc") {
            (Engine::Shrinkage, rest)
        } else if let Some(rest) = lower.strip_prefix("tmac") {
            (Engine::Factorization, rest)
        } else {
            return Err(Error::arg(format!("unknown solver {s:?}")));
        };
        let scheme = match rest {
            "" => Scheme::Tucker,
            "-tt" => Scheme::TensorTrain,
            "-square" => Scheme::Square,
            _ => return Err(Error::arg(format!("unknown solver {s:?}"))),
        };
        Ok(Self { scheme, engine })
    }
}

/// One row of the per-iteration trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    /// `||X^{l+1} - X^l||_F / ||T_Omega||_F`.
    pub relative_change: f64,
    /// Shrinkage-engine objective after the iteration.
    pub objective: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub recovered: DenseTensor,
    pub iterations: usize,
    pub trace: Vec<TraceEntry>,
    pub converged: bool,
    pub elapsed_secs: f64,
    pub weights: Vec<f64>,
    /// Ranks used per split (factorization engine, after clamping).
    pub ranks: Option<Vec<usize>>,
}

impl SolveReport {
    pub fn final_change(&self) -> f64 {
        self.trace.last().map_or(f64::INFINITY, |t| t.relative_change)
    }
}

/// Runs the engine selected by `cfg`.
pub fn solve(mask: &ObservationMask, cfg: &SolverConfig) -> Result<SolveReport> {
    solve_observed(mask, cfg, |_, _| {})
}

/// Like [`solve`], calling `observer(iteration, &X)` after every tensor update.
pub fn solve_observed(
    mask: &ObservationMask,
    cfg: &SolverConfig,
    observer: impl FnMut(usize, &DenseTensor),
) -> Result<SolveReport> {
    match cfg.engine {
        Engine::Shrinkage => shrinkage::run(mask, cfg, observer),
        Engine::Factorization => factorization::run(mask, cfg, observer),
    }
}

/// Denominator of the convergence test; `T` is only known on `Omega`.
pub(crate) fn reference_norm(mask: &ObservationMask) -> f64 {
    let n = mask.observed_norm();
    if n > 0.0 {
        n
    } else {
        1.0
    }
}

/// Calls `f` with the matrix of `split`; prefix splits borrow the buffer.
pub(crate) fn with_matrix<R>(
    x: &DenseTensor,
    split: Split,
    f: impl FnOnce(DMatrixView<'_, f64>) -> R,
) -> Result<R> {
    match split {
        Split::Prefix(k) => Ok(f(x.prefix_view(k)?)),
        Split::ModeN(_) => {
            let view = x.unfold(split)?;
            Ok(f(view.matrix.as_view()))
        }
    }
}

/// Folds `m` back to storage order.
pub(crate) fn fold_data(m: DMatrix<f64>, shape: &[usize], split: Split) -> Result<Vec<f64>> {
    match split {
        Split::Prefix(_) => Ok(m.data.into()),
        Split::ModeN(_) => Ok(fold_matrix(&m, shape, split)?.into_data()),
    }
}

pub(crate) fn relative_change(new: &[f64], old: &[f64], denom: f64) -> f64 {
    new.iter()
        .zip(old)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
        / denom
}
