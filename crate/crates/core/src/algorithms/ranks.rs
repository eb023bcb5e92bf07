use log::warn;

use super::Scheme;
use crate::error::Result;
use crate::linalg::{estimate_rank, singular_values};
use crate::mask::ObservationMask;

/// Initial ranks for the factorization engine: for every split of `scheme`,
/// the number of singular values of the zero-filled observation whose ratio
/// to the largest exceeds `th`.
///
/// An identically zero matricization gets rank 1 and a warning.
pub fn init_ranks(mask: &ObservationMask, scheme: Scheme, th: f64) -> Result<Vec<usize>> {
    if !(th > 0.0 && th < 1.0) {
        return Err(crate::Error::Argument(format!(
            "rank threshold must lie in (0, 1), got {th}"
        )));
    }
    let x0 = mask.zero_filled();
    scheme
        .splits(x0.order())
        .into_iter()
        .map(|split| {
            let s = super::with_matrix(&x0, split, |m| singular_values(&m))??;
            if s.first().is_none_or(|&top| top <= 0.0) {
                warn!("{split} of the initial tensor is zero; using rank 1");
                return Ok(1);
            }
            estimate_rank(&s, th)
        })
        .collect()
}
