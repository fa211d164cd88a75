//! Autocorrelation and effective sample size for single chains.
//!
//! ESS uses Geyer's initial positive sequence: with Γ_m = ρ̂_{2m} + ρ̂_{2m+1},
//! the autocorrelation sum is truncated before the first m with Γ_m ≤ 0, and
//!
//! ```text
//! ESS = n / (1 + 2 Σ_{k=1}^{K} ρ̂_k),   clamped to (0, n].
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::samplers::{ChainTrace, TRACE_PARAMETERS};

/// Name of the truncation rule, recorded with every ESS table.
pub const ESS_METHOD: &str = "geyer_initial_positive_sequence";

/// Smallest series accepted by [`effective_sample_size`].
pub const MIN_ESS_LENGTH: usize = 10;

/// Centered series with its lag-0 sum of squares; computes ρ̂_k on demand.
struct Acf {
    centered: Vec<f64>,
    denom: f64,
}

impl Acf {
    fn new(series: &[f64]) -> Result<Self> {
        if series.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("series has non-finite values".into()));
        }
        let n = series.len() as f64;
        let mean = series.iter().sum::<f64>() / n;
        let centered: Vec<f64> = series.iter().map(|x| x - mean).collect();
        let denom: f64 = centered.iter().map(|x| x * x).sum();
        // relative threshold so that tiny rounding noise around a constant
        // still counts as constant
        let scale = series.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if denom <= (f64::EPSILON * scale).powi(2) * n {
            return Err(Error::ZeroVariance);
        }
        Ok(Self { centered, denom })
    }

    fn lag(&self, k: usize) -> f64 {
        let x = &self.centered;
        x[..x.len() - k]
            .iter()
            .zip(&x[k..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / self.denom
    }
}

/// ρ̂_0, …, ρ̂_max_lag with the biased estimator
/// Σ_t (x_t − x̄)(x_{t+k} − x̄) / Σ_t (x_t − x̄)².
pub fn autocorrelation(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    if max_lag < 1 || series.len() <= max_lag {
        return Err(Error::InvalidInput(format!(
            "need 1 <= max_lag < series length, got max_lag {max_lag} for length {}",
            series.len()
        )));
    }
    let acf = Acf::new(series)?;
    Ok((0..=max_lag).map(|k| acf.lag(k)).collect())
}

/// Half-width ±1.96/√n of the pointwise band outside which an
/// autocorrelation is significantly nonzero at the 5% level.
pub fn significance_band(n: usize) -> f64 {
    1.96 / (n as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EssResult {
    pub parameter: String,
    pub n: usize,
    pub ess: f64,
    /// Number of leading autocorrelations (lags 0..truncation_lag) that
    /// entered the sum; always even.
    pub truncation_lag: usize,
    pub acf: Vec<f64>,
}

/// ESS of an unnamed series.
pub fn effective_sample_size(series: &[f64]) -> Result<EssResult> {
    named_ess("", series)
}

pub fn named_ess(parameter: &str, series: &[f64]) -> Result<EssResult> {
    let n = series.len();
    if n < MIN_ESS_LENGTH {
        return Err(Error::InvalidInput(format!(
            "ESS needs at least {MIN_ESS_LENGTH} samples, got {n}"
        )));
    }
    let acf = Acf::new(series)?;
    let mut rho = vec![1.0];
    let mut pair_sum = 0.0;
    let mut m = 0;
    while 2 * m + 1 < n {
        let even = if m == 0 { 1.0 } else { acf.lag(2 * m) };
        let odd = acf.lag(2 * m + 1);
        if even + odd <= 0.0 {
            break;
        }
        if m > 0 {
            rho.push(even);
        }
        rho.push(odd);
        pair_sum += even + odd;
        m += 1;
    }
    // τ = 1 + 2 Σ_{k=1}^{K} ρ̂_k = −1 + 2 Σ_m Γ_m, or 1 when no pair is kept
    let tau = if m == 0 { 1.0 } else { 2.0 * pair_sum - 1.0 };
    let nf = n as f64;
    let ess = if tau > 0.0 { (nf / tau).min(nf) } else { nf };
    Ok(EssResult {
        parameter: parameter.to_string(),
        n,
        ess,
        truncation_lag: 2 * m,
        acf: rho,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub parameter: String,
    pub mean: f64,
    pub sd: f64,
    pub ess: Option<EssResult>,
    pub error: Option<String>,
}

/// Mean, standard deviation and ESS of every traced scalar. A parameter
/// whose ESS cannot be computed (too short, constant) carries the error
/// instead.
pub fn summarize_trace(trace: &ChainTrace) -> Vec<ParameterSummary> {
    TRACE_PARAMETERS
        .iter()
        .map(|&name| {
            let series = trace.series(name).expect("known parameter");
            let n = series.len();
            let mean = if n == 0 {
                f64::NAN
            } else {
                series.iter().sum::<f64>() / n as f64
            };
            let sd = if n < 2 {
                f64::NAN
            } else {
                (series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            };
            let (ess, error) = match named_ess(name, &series) {
                Ok(e) => (Some(e), None),
                Err(e) => (None, Some(e.to_string())),
            };
            ParameterSummary {
                parameter: name.to_string(),
                mean,
                sd,
                ess,
                error,
            }
        })
        .collect()
}
