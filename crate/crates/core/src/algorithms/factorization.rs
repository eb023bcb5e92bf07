use std::time::Instant;

use log::warn;
use nalgebra::DMatrix;

use super::{
    fold_data, init_ranks, reference_norm, relative_change, with_matrix, Engine, SolveReport,
    SolverConfig, TraceEntry,
};
use crate::error::{Error, Result};
use crate::linalg::{ls_update_u, ls_update_v};
use crate::mask::ObservationMask;
use crate::random::{gaussian_matrix, seeded};
use crate::tensor::DenseTensor;

/// Parallel matrix factorization completion (TMac family).
///
/// For every penalized split `k` with rank `r_k` the factors are updated as
/// `U = X_[k] V^T`, `V = (U^T U)^+ U^T X_[k]`, giving `X_[k] ~ U V`; the
/// unobserved entries of `X` then become `sum_k alpha_k fold(U_k V_k)` and
/// the observed entries are reset to `T_Omega`.
///
/// Ranks come from `cfg.ranks` or from [`init_ranks`] with
/// `cfg.rank_threshold`; ranks at or above the smaller matrix dimension are
/// clamped with a warning.
pub fn solve_factorization(mask: &ObservationMask, cfg: &SolverConfig) -> Result<SolveReport> {
    run(mask, cfg, |_, _| {})
}

pub(super) fn run(
    mask: &ObservationMask,
    cfg: &SolverConfig,
    mut observer: impl FnMut(usize, &DenseTensor),
) -> Result<SolveReport> {
    if cfg.engine != Engine::Factorization {
        return Err(Error::arg("solve_factorization called with a shrinkage config"));
    }
    cfg.validate()?;
    let shape = mask.shape().to_vec();
    let weights = cfg.resolve_weights(&shape)?;
    let active = cfg.active_splits(&shape)?;
    let splits = cfg.scheme.splits(shape.len());

    let mut ranks = match &cfg.ranks {
        Some(r) if r.len() == splits.len() => r.clone(),
        Some(r) => {
            return Err(Error::arg(format!(
                "{} ranks given, scheme needs {}",
                r.len(),
                splits.len()
            )))
        }
        None => init_ranks(mask, cfg.scheme, cfg.rank_threshold)?,
    };
    for (r, split) in ranks.iter_mut().zip(&splits) {
        let (rows, cols) = split.dims(&shape)?;
        let cap = rows.min(cols);
        if *r == 0 {
            return Err(Error::arg(format!("{split}: rank must be positive")));
        }
        if *r > cap {
            warn!("{split}: rank {r} exceeds min({rows}, {cols}); clamping to {cap}");
            *r = cap;
        }
    }

    let denom = reference_norm(mask);
    let start = Instant::now();
    let mut rng = seeded(cfg.seed);
    let mut factors_v: Vec<DMatrix<f64>> = active
        .iter()
        .map(|&(i, split, _)| {
            let (_, cols) = split.dims(&shape).expect("validated split");
            gaussian_matrix(ranks[i], cols, &mut rng)
        })
        .collect();
    let alpha_sum: f64 = active.iter().map(|&(_, _, a)| a).sum();

    let mut x = mask.zero_filled();
    let len = x.len();
    let mut trace = Vec::new();
    let mut converged = false;

    for iteration in 1..=cfg.max_iter {
        let mut next = vec![0.0; len];
        for (v, &(_, split, alpha)) in factors_v.iter_mut().zip(&active) {
            let product = with_matrix(&x, split, |xk| -> Result<DMatrix<f64>> {
                let u = ls_update_u(&xk, v)?;
                *v = ls_update_v(&u, &xk)?;
                Ok(u * &*v)
            })?
            .map_err(|e| Error::numerical(iteration, format!("{split}: {e}")))?;
            let folded = fold_data(product, &shape, split)?;
            for (n, p) in next.iter_mut().zip(&folded) {
                *n += alpha * p;
            }
        }
        if alpha_sum != 1.0 {
            for n in next.iter_mut() {
                *n /= alpha_sum;
            }
        }
        let mut next = DenseTensor::new(shape.clone(), next)?;
        mask.write_into(&mut next);
        if !next.is_finite() {
            return Err(Error::numerical(iteration, "non-finite entries in the iterate"));
        }

        let change = relative_change(next.data(), x.data(), denom);
        x = next;
        observer(iteration, &x);
        trace.push(TraceEntry {
            iteration,
            relative_change: change,
            objective: None,
        });
        if change <= cfg.tol {
            converged = true;
            break;
        }
    }

    Ok(SolveReport {
        recovered: x,
        iterations: trace.len(),
        trace,
        converged,
        elapsed_secs: start.elapsed().as_secs_f64(),
        weights,
        ranks: Some(ranks),
    })
}
