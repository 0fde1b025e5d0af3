//! Central-difference verification of analytic gradients.

use super::{NumericsError, ParamGrads, ParamStore};

/// Compare `analytic` against central differences of `loss_fn` around
/// `params`, returning the maximum relative error
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8) over all
/// coordinates.
pub fn gradient_check<F>(
    mut loss_fn: F,
    params: &ParamStore,
    analytic: &ParamGrads,
    perturbation: f64,
) -> Result<f64, NumericsError>
where
    F: FnMut(&ParamStore) -> f64,
{
    assert!(perturbation > 0.0);
    let mut work = params.clone();
    let mut max_err: f64 = 0.0;
    for slot in 0..params.len() {
        for i in 0..params.tensor(slot).len() {
            let orig = params.tensor(slot).data()[i];
            work.tensor_mut(slot).data_mut()[i] = orig + perturbation;
            let plus = loss_fn(&work);
            work.tensor_mut(slot).data_mut()[i] = orig - perturbation;
            let minus = loss_fn(&work);
            work.tensor_mut(slot).data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(NumericsError::NonFinite {
                    context: "gradient_check loss",
                });
            }
            let numeric = (plus - minus) / (2.0 * perturbation);
            let a = analytic.slot(slot)[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if err > max_err {
                max_err = err;
            }
        }
    }
    Ok(max_err)
}
