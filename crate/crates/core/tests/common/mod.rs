//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use crossed_gibbs::{ObservationSet, VarianceComponents};
use nalgebra::{DMatrix, DVector};

/// Exact posterior of θ = (a⁽⁰⁾, a⁽¹⁾, a⁽²⁾) for known variances and a
/// flat prior on a⁽⁰⁾, by dense linear-model algebra:
/// Q = XᵀX/σ_E² + diag(0, I/σ₁², I/σ₂²), mean = Q⁻¹Xᵀy/σ_E².
pub fn gaussian_posterior(obs: &ObservationSet, vc: &VarianceComponents) -> (DVector<f64>, DMatrix<f64>) {
    let (r, c) = (obs.rows(), obs.cols());
    let p = 1 + r + c;
    let mut x = DMatrix::zeros(obs.total(), p);
    let mut y = DVector::zeros(obs.total());
    for (k, (i, j, v)) in obs.cells().enumerate() {
        x[(k, 0)] = 1.0;
        x[(k, 1 + i)] = 1.0;
        x[(k, 1 + r + j)] = 1.0;
        y[k] = v;
    }
    let mut q = x.tr_mul(&x) / vc.sigma_e_sq;
    for i in 0..r {
        q[(1 + i, 1 + i)] += 1.0 / vc.sigma1_sq;
    }
    for j in 0..c {
        q[(1 + r + j, 1 + r + j)] += 1.0 / vc.sigma2_sq;
    }
    let cov = q.try_inverse().expect("posterior precision is positive definite");
    let mean = &cov * x.tr_mul(&y) / vc.sigma_e_sq;
    (mean, cov)
}

/// Mean of a correlated series with its batch-means standard error.
pub fn batch_mean_se(series: &[f64], batches: usize) -> (f64, f64) {
    let b = series.len() / batches;
    let used = &series[..b * batches];
    let mean = used.iter().sum::<f64>() / used.len() as f64;
    let bm: Vec<f64> = used.chunks(b).map(|c| c.iter().sum::<f64>() / b as f64).collect();
    let var = bm.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (mean, (var / batches as f64).sqrt())
}

/// Per-coordinate comparison of MCMC draws with a Gaussian target.
/// Returns the largest |z| over means and over variances, each z being
/// (estimate − truth) / batch-means SE.
pub fn moment_z_scores(draws: &[Vec<f64>], mean: &[f64], var: &[f64]) -> (f64, f64) {
    let d = mean.len();
    let mut zmean: f64 = 0.0;
    let mut zvar: f64 = 0.0;
    for k in 0..d {
        let col: Vec<f64> = draws.iter().map(|x| x[k]).collect();
        let (m, se) = batch_mean_se(&col, 100);
        zmean = zmean.max(((m - mean[k]) / se).abs());
        let sq: Vec<f64> = col.iter().map(|x| (x - mean[k]).powi(2)).collect();
        let (v, se_v) = batch_mean_se(&sq, 100);
        zvar = zvar.max(((v - var[k]) / se_v).abs());
    }
    (zmean, zvar)
}

/// Posterior density of a precision τ given n Gaussian terms with sum of
/// squares `ss` and prior density ∝ τ^(−3/2) (flat on τ^(−1/2)),
/// normalized by trapezoid quadrature in u = ln τ.
pub fn precision_grid_oracle(n: usize, ss: f64, taus: &[f64]) -> Vec<f64> {
    let log_unnorm = |tau: f64| -> f64 {
        let log_prior = -1.5 * tau.ln();
        let log_lik = 0.5 * n as f64 * tau.ln() - 0.5 * tau * ss;
        log_prior + log_lik
    };
    // mode of the integrand in u is near ln((n − 1)/ss)
    let center = ((n as f64 - 1.0) / ss).ln();
    let (lo, hi, steps) = (center - 80.0, center + 10.0, 400_000);
    let h = (hi - lo) / steps as f64;
    let shift = log_unnorm(center.exp()) + center;
    let mut z = 0.0;
    for k in 0..=steps {
        let u = lo + k as f64 * h;
        let w = if k == 0 || k == steps { 0.5 } else { 1.0 };
        z += w * (log_unnorm(u.exp()) + u - shift).exp();
    }
    z *= h;
    taus.iter()
        .map(|&t| (log_unnorm(t) - shift).exp() / z)
        .collect()
}
