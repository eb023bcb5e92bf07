use std::time::Instant;

use super::{
    fold_data, reference_norm, relative_change, with_matrix, Engine, SolveReport, SolverConfig,
    TraceEntry,
};
use crate::error::{Error, Result};
use crate::linalg::shrink_detailed;
use crate::mask::ObservationMask;
use crate::tensor::DenseTensor;

/// Nuclear-norm shrinkage completion (SiLRTC family).
///
/// Each iteration replaces every penalized matricization `X_[k]` by
/// `M_k = D_{alpha_k / beta_k}(X_[k])`, then sets the unobserved entries of
/// `X` to the `beta`-weighted average of the folded `M_k` and resets the
/// observed ones to `T_Omega`. Splits with zero weight take no part.
pub fn solve_shrinkage(mask: &ObservationMask, cfg: &SolverConfig) -> Result<SolveReport> {
    run(mask, cfg, |_, _| {})
}

pub(super) fn run(
    mask: &ObservationMask,
    cfg: &SolverConfig,
    mut observer: impl FnMut(usize, &DenseTensor),
) -> Result<SolveReport> {
    if cfg.engine != Engine::Shrinkage {
        return Err(Error::arg("solve_shrinkage called with a factorization config"));
    }
    cfg.validate()?;
    let shape = mask.shape().to_vec();
    let weights = cfg.resolve_weights(&shape)?;
    let active = cfg.active_splits(&shape)?;
    let f = cfg.penalty_factor;
    let beta_sum: f64 = active.iter().map(|&(_, _, a)| f * a).sum();
    let denom = reference_norm(mask);
    let start = Instant::now();

    let mut x = mask.zero_filled();
    let len = x.len();
    let mut folded: Vec<Vec<f64>> = vec![Vec::new(); active.len()];
    let mut nuclear = vec![0.0; active.len()];
    let mut trace = Vec::new();
    let mut converged = false;

    for iteration in 1..=cfg.max_iter {
        for (slot, &(_, split, alpha)) in active.iter().enumerate() {
            let beta = f * alpha;
            let shrunk = with_matrix(&x, split, |m| shrink_detailed(&m, alpha / beta))?
                .map_err(|e| Error::numerical(iteration, format!("{split}: {e}")))?;
            nuclear[slot] = shrunk.nuclear_norm;
            folded[slot] = fold_data(shrunk.matrix, &shape, split)?;
        }

        let mut next = vec![0.0; len];
        for (m, &(_, _, alpha)) in folded.iter().zip(&active) {
            let beta = f * alpha;
            for (n, v) in next.iter_mut().zip(m) {
                *n += beta * v;
            }
        }
        for n in next.iter_mut() {
            *n /= beta_sum;
        }
        let mut next = DenseTensor::new(shape.clone(), next)?;
        mask.write_into(&mut next);
        if !next.is_finite() {
            return Err(Error::numerical(iteration, "non-finite entries in the iterate"));
        }

        let objective: f64 = folded
            .iter()
            .zip(&active)
            .zip(&nuclear)
            .map(|((m, &(_, _, alpha)), &nn)| {
                let gap: f64 = next
                    .data()
                    .iter()
                    .zip(m)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                alpha * nn + 0.5 * f * alpha * gap
            })
            .sum();
        let change = relative_change(next.data(), x.data(), denom);
        x = next;
        observer(iteration, &x);
        trace.push(TraceEntry {
            iteration,
            relative_change: change,
            objective: Some(objective),
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
        ranks: None,
    })
}
