use crate::error::{dim_err, Error, Result};

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Compares an analytic gradient with central differences.
///
/// Returns `maxᵢ |fd_i − g_i| / max(1, |g_i|)`.
pub fn check_gradient<F, G>(f: F, grad_f: G, x: &[f64], h: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    let grad = grad_f(x);
    if grad.len() != x.len() {
        return Err(dim_err(format!(
            "gradient has {} entries for {} inputs",
            grad.len(),
            x.len()
        )));
    }
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Domain(format!(
                "objective not finite near coordinate {i}"
            )));
        }
        let fd = (up - down) / (2.0 * h);
        let err = (fd - grad[i]).abs() / grad[i].abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}
