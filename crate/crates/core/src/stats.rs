//! Shared numeric helpers.

use statrs::function::factorial::ln_binomial;

/// Natural-log binomial probability mass `ln Pr(k successes | n trials, p)`.
///
/// The edge probabilities are handled exactly: `p = 0` puts all mass on
/// `k = 0` and `p = 1` on `k = n`; impossible outcomes return `-inf`.
pub fn binomial_log_pmf(k: u64, n: u64, p: f64) -> f64 {
    assert!(k <= n, "k = {k} exceeds n = {n}");
    debug_assert!((-1e-12..=1.0 + 1e-12).contains(&p), "p = {p} outside [0, 1]");
    let p = p.clamp(0.0, 1.0);
    if p == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if p == 1.0 {
        return if k == n { 0.0 } else { f64::NEG_INFINITY };
    }
    let mut ll = ln_binomial(n, k);
    if k > 0 {
        ll += k as f64 * p.ln();
    }
    if k < n {
        ll += (n - k) as f64 * (1.0 - p).ln();
    }
    ll
}

/// `ln(sum exp(x_i))` with the usual max shift; `-inf` when the sum is empty
/// or every term is `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}
