//! Central finite differences through a black-box loss of the latent.

use crate::brdf::{MaterialParams, PARAM_COUNT};
use crate::error::{Error, ProviderError, Result};

pub const DEFAULT_EPSILON: f64 = 1e-3;

/// Gradient of `loss` at `at` by central differences, one coordinate at a
/// time (2 evaluations each). Probes are clamped to `[0, 1]` and the quotient
/// uses the actual probe spacing.
pub fn estimate_latent_gradient<F>(
    at: &MaterialParams,
    mut loss: F,
    epsilon: f64,
) -> Result<[f64; PARAM_COUNT]>
where
    F: FnMut(&MaterialParams) -> Result<f64, ProviderError>,
{
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::OutOfRange {
            what: "epsilon",
            value: epsilon,
        });
    }
    let base = at.to_array();
    let mut grad = [0.0; PARAM_COUNT];
    for i in 0..PARAM_COUNT {
        let hi = (base[i] + epsilon).min(1.0);
        let lo = (base[i] - epsilon).max(0.0);
        let mut probe = base;
        probe[i] = hi;
        let f_hi =
            loss(&MaterialParams::from_array_unchecked(probe)).map_err(|source| Error::Probe {
                coordinate: i,
                source,
            })?;
        probe[i] = lo;
        let f_lo =
            loss(&MaterialParams::from_array_unchecked(probe)).map_err(|source| Error::Probe {
                coordinate: i,
                source,
            })?;
        grad[i] = (f_hi - f_lo) / (hi - lo);
    }
    Ok(grad)
}
