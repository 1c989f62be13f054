use super::{GradStore, ParamStore, TensorError};

/// Largest discrepancy between an analytic gradient and central finite
/// differences, over every entry of every parameter:
/// `|analytic - numeric| / max(1, |analytic|)`.
///
/// `loss` evaluates the scalar objective; `analytic` returns the gradient
/// being checked. Both are called with the same (perturbed or nominal)
/// parameters, which are restored before returning.
pub fn grad_check<L, G>(
    params: &mut ParamStore<f64>,
    mut loss: L,
    analytic: G,
    eps: f64,
) -> Result<f64, TensorError>
where
    L: FnMut(&ParamStore<f64>) -> Result<f64, TensorError>,
    G: FnOnce(&ParamStore<f64>) -> Result<GradStore<f64>, TensorError>,
{
    let grads = analytic(params)?;
    let mut worst = 0.0f64;
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        for k in 0..params.get(id).len() {
            let original = params.get(id).data()[k];
            params.get_mut(id).data_mut()[k] = original + eps;
            let plus = loss(params);
            params.get_mut(id).data_mut()[k] = original - eps;
            let minus = loss(params);
            params.get_mut(id).data_mut()[k] = original;
            let numeric = (plus? - minus?) / (2.0 * eps);
            let a = grads.get(id).data()[k];
            let err = (a - numeric).abs() / a.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
