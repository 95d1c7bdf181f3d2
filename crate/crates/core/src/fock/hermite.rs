//! Normalized Hermite functions `phi_n(xi) = (2^n n! sqrt(pi))^(-1/2) H_n(xi) exp(-xi^2/2)`.
//!
//! The upward recurrence works on the normalized functions directly, so no
//! factorials or large polynomial values appear.

use std::f64::consts::PI;

/// `phi_0..=phi_n` at `xi`.
pub fn hermite_functions(n: usize, xi: f64) -> Vec<f64> {
    let mut out = vec![0.0; n + 1];
    fill(&mut out, xi);
    out
}

fn fill(out: &mut [f64], xi: f64) {
    out[0] = PI.powf(-0.25) * (-0.5 * xi * xi).exp();
    if out.len() > 1 {
        out[1] = std::f64::consts::SQRT_2 * xi * out[0];
    }
    for k in 1..out.len().saturating_sub(1) {
        let kf = k as f64;
        out[k + 1] = (2.0 / (kf + 1.0)).sqrt() * xi * out[k] - (kf / (kf + 1.0)).sqrt() * out[k - 1];
    }
}

/// Values and first derivatives, `phi_n' = -xi phi_n + sqrt(2n) phi_{n-1}`.
pub fn hermite_with_derivatives(values: &mut [f64], derivatives: &mut [f64], xi: f64) {
    fill(values, xi);
    for k in 0..values.len() {
        let lower = if k > 0 { (2.0 * k as f64).sqrt() * values[k - 1] } else { 0.0 };
        derivatives[k] = -xi * values[k] + lower;
    }
}

/// Largest `|xi|` at which functions up to order `n` are evaluated; beyond
/// it every retained function is below `exp(-32)` of its peak.
pub fn reliable_range(n: usize) -> f64 {
    (2.0 * n as f64 + 1.0).sqrt() + 8.0
}
