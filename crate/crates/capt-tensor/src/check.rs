//! Central-difference gradient checking. This is the oracle the analytic
//! adjoints are verified against, so it depends on nothing in the tape.

/// Step size for central differences in double precision.
pub const FD_STEP: f64 = 1e-5;

/// Relative error with a unit floor in the denominator, so values near zero
/// are compared absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Central-difference gradient of a scalar function at x.
pub fn finite_diff_grad<F>(mut f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let x0 = probe[i];
        probe[i] = x0 + h;
        let fp = f(&probe);
        probe[i] = x0 - h;
        let fm = f(&probe);
        probe[i] = x0;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Largest elementwise relative error between two gradients.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}
