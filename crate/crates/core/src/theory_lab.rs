//! Finite-S checks of the concentration and random-matrix bounds that
//! underpin the collapsed sampler's scalability, and the ‖M‖₂-versus-S
//! experiment.
//!
//! Every verifier is deterministic in (spec, seed, replicates): replicate
//! `k` draws its pattern and mask from sub-streams indexed by `k`, and
//! replicates run in parallel but are merged by index.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autoregression::{analyze, phi_upsilon};
use crate::error::{Error, Result};
use crate::missingness::{make_pattern, sample_z, ProbabilityPattern, RegimeSpec};
use crate::model::{SparsePattern, VarianceComponents};
use crate::rng::derive_indexed;
use crate::spectral::{power_norm, sparse_norm, spectral_norm};

/// Relative slack allowed when comparing a computed norm with an exact
/// bound that can be attained (e.g. ‖Z‖₂ = 2 for the all-ones 2×2).
const NORM_SLACK: f64 = 1e-9;

/// Default cap for the Latała ratio.
pub const DEFAULT_LATALA_CAP: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Pass when observed ≤ bound.
    AtMost,
    /// Pass when observed ≥ bound.
    AtLeast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetailRow {
    pub replicate: usize,
    pub values: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub check: String,
    pub parameters: BTreeMap<String, f64>,
    pub observed: f64,
    pub bound: f64,
    pub direction: Direction,
    pub passed: bool,
    pub details: Vec<DetailRow>,
}

impl VerificationReport {
    fn new(
        check: &str,
        parameters: BTreeMap<String, f64>,
        observed: f64,
        bound: f64,
        direction: Direction,
        details: Vec<DetailRow>,
    ) -> Self {
        let passed = match direction {
            Direction::AtMost => observed <= bound,
            Direction::AtLeast => observed >= bound,
        };
        Self {
            check: check.to_string(),
            parameters,
            observed,
            bound,
            direction,
            passed,
            details,
        }
    }
}

fn spec_parameters(spec: &RegimeSpec, replicates: usize) -> BTreeMap<String, f64> {
    BTreeMap::from([
        ("S".to_string(), spec.s),
        ("rho".to_string(), spec.rho),
        ("kappa".to_string(), spec.kappa),
        ("upsilon".to_string(), spec.regime.upsilon()),
        ("upsilon_lower".to_string(), spec.regime.upsilon_lower()),
        ("replicates".to_string(), replicates as f64),
        ("seed".to_string(), spec.seed as f64),
    ])
}

fn row(replicate: usize, values: &[(&str, f64)]) -> DetailRow {
    DetailRow {
        replicate,
        values: values.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
    }
}

/// Hoeffding tail bound exp(−2t²/n) for Bin(n, p) deviating by t.
pub fn hoeffding_bound(n: u64, t: f64) -> f64 {
    (-2.0 * t * t / n as f64).exp()
}

/// Union bound on the probability that some row or column sum leaves its
/// envelope: 2R exp(−2S^(2−κ−2ρ)ψ²) + 2C exp(−2S^(2−ρ−2κ)ψ²).
pub fn concentration_bound(spec: &RegimeSpec, psi: f64) -> f64 {
    let (s, rho, kappa) = (spec.s, spec.rho, spec.kappa);
    2.0 * spec.rows() as f64 * (-2.0 * s.powf(2.0 - kappa - 2.0 * rho) * psi * psi).exp()
        + 2.0 * spec.cols() as f64 * (-2.0 * s.powf(2.0 - rho - 2.0 * kappa) * psi * psi).exp()
}

/// Envelopes [(1/Υ′ − ψ)S^(1−ρ), (Υ + ψ)S^(1−ρ)] for row sums and the
/// analogue with S^(1−κ) for column sums.
pub fn concentration_envelopes(spec: &RegimeSpec, psi: f64) -> ((f64, f64), (f64, f64)) {
    let (up, low) = (spec.regime.upsilon(), spec.regime.upsilon_lower());
    let rs = spec.s.powf(1.0 - spec.rho);
    let cs = spec.s.powf(1.0 - spec.kappa);
    (
        ((1.0 / low - psi) * rs, (up + psi) * rs),
        ((1.0 / low - psi) * cs, (up + psi) * cs),
    )
}

fn min_max(v: &[u64]) -> (f64, f64) {
    let lo = v.iter().copied().min().unwrap_or(0) as f64;
    let hi = v.iter().copied().max().unwrap_or(0) as f64;
    (lo, hi)
}

fn replicate_pattern(spec: &RegimeSpec, label: &str, k: usize) -> Result<ProbabilityPattern> {
    make_pattern(&spec.with_seed(derive_indexed(spec.seed, label, k as u64)))
}

/// Fraction of replicates in which some row or column sum of Z leaves
/// its envelope, against the union bound.
pub fn verify_row_col_concentration(
    spec: &RegimeSpec,
    psi: f64,
    replicates: usize,
) -> Result<VerificationReport> {
    if replicates == 0 {
        return Err(Error::InvalidInput("need at least one replicate".into()));
    }
    let ((rlo, rhi), (clo, chi)) = concentration_envelopes(spec, psi);
    let details: Vec<DetailRow> = (0..replicates)
        .into_par_iter()
        .map(|k| -> Result<DetailRow> {
            let pattern = replicate_pattern(spec, "concentration/pattern", k)?;
            let z = sample_z(&pattern, derive_indexed(spec.seed, "concentration/z", k as u64));
            let (rmin, rmax) = min_max(z.row_counts());
            let (cmin, cmax) = min_max(z.col_counts());
            let violated = rmin < rlo || rmax > rhi || cmin < clo || cmax > chi;
            Ok(row(
                k,
                &[
                    ("row_min", rmin),
                    ("row_max", rmax),
                    ("col_min", cmin),
                    ("col_max", cmax),
                    ("violated", violated as u8 as f64),
                ],
            ))
        })
        .collect::<Result<_>>()?;
    let fraction = details.iter().map(|d| d.values["violated"]).sum::<f64>() / replicates as f64;
    let mut params = spec_parameters(spec, replicates);
    params.insert("psi".into(), psi);
    params.insert("row_envelope_lo".into(), rlo);
    params.insert("row_envelope_hi".into(), rhi);
    params.insert("col_envelope_lo".into(), clo);
    params.insert("col_envelope_hi".into(), chi);
    Ok(VerificationReport::new(
        "row_col_concentration",
        params,
        fraction,
        concentration_bound(spec, psi),
        Direction::AtMost,
        details,
    ))
}

/// ‖Z‖₂ against √(max_i N_i· · max_j N_·j).
pub fn verify_z_norm_bound(z: &SparsePattern) -> Result<VerificationReport> {
    if z.nnz() == 0 {
        return Err(Error::InvalidInput("observation matrix is empty".into()));
    }
    let observed = sparse_norm(z, 1e-13, 1_000_000)?;
    let (_, rmax) = min_max(z.row_counts());
    let (_, cmax) = min_max(z.col_counts());
    let bound = (rmax * cmax).sqrt();
    let params = BTreeMap::from([
        ("rows".to_string(), z.rows() as f64),
        ("cols".to_string(), z.cols() as f64),
        ("nnz".to_string(), z.nnz() as f64),
    ]);
    let mut report = VerificationReport::new(
        "z_norm_bound",
        params,
        observed,
        bound,
        Direction::AtMost,
        vec![],
    );
    report.passed = observed <= bound * (1.0 + NORM_SLACK);
    Ok(report)
}

/// [`verify_z_norm_bound`] over `instances` random masks drawn under
/// `spec`; observed is the number of violations, bound is 0.
pub fn verify_z_norm_bound_batch(spec: &RegimeSpec, instances: usize) -> Result<VerificationReport> {
    let details: Vec<DetailRow> = (0..instances)
        .into_par_iter()
        .map(|k| -> Result<DetailRow> {
            let pattern = replicate_pattern(spec, "znorm/pattern", k)?;
            let z = sample_z(&pattern, derive_indexed(spec.seed, "znorm/z", k as u64));
            let r = verify_z_norm_bound(&z)?;
            Ok(row(
                k,
                &[
                    ("norm", r.observed),
                    ("bound", r.bound),
                    ("violated", (!r.passed) as u8 as f64),
                ],
            ))
        })
        .collect::<Result<_>>()?;
    let violations = details.iter().map(|d| d.values["violated"]).sum::<f64>();
    Ok(VerificationReport::new(
        "z_norm_bound_batch",
        spec_parameters(spec, instances),
        violations,
        0.0,
        Direction::AtMost,
        details,
    ))
}

/// √(ΥS/R) + √(ΥS/C) + (ΥS)^(1/4).
pub fn latala_bracket(s: f64, rows: usize, cols: usize, upsilon: f64) -> f64 {
    let us = upsilon * s;
    (us / rows as f64).sqrt() + (us / cols as f64).sqrt() + us.powf(0.25)
}

fn centered_norm(z: &SparsePattern, p: &DMatrix<f64>) -> Result<f64> {
    let mut x = -p.clone();
    for (i, j) in z.entries() {
        x[(i, j)] += 1.0;
    }
    if x.amax() == 0.0 {
        return Ok(0.0);
    }
    if x.nrows().min(x.ncols()) <= 64 {
        spectral_norm(&x, 1e-10, 200_000)
    } else {
        power_norm(&x, 1e-9, 200_000, 17)
    }
}

/// Replicate mean of ‖Z − E Z‖₂ for a fixed pattern, divided by
/// [`latala_bracket`]. Passes when the ratio stays below `cap`.
pub fn latala_ratio_for_pattern(
    pattern: &ProbabilityPattern,
    s: f64,
    upsilon: f64,
    replicates: usize,
    seed: u64,
    cap: f64,
) -> Result<VerificationReport> {
    if replicates == 0 {
        return Err(Error::InvalidInput("need at least one replicate".into()));
    }
    let details: Vec<DetailRow> = (0..replicates)
        .into_par_iter()
        .map(|k| -> Result<DetailRow> {
            let z = sample_z(pattern, derive_indexed(seed, "latala/z", k as u64));
            Ok(row(k, &[("centered_norm", centered_norm(&z, &pattern.p)?)]))
        })
        .collect::<Result<_>>()?;
    let mean = details.iter().map(|d| d.values["centered_norm"]).sum::<f64>() / replicates as f64;
    let bracket = latala_bracket(s, pattern.rows(), pattern.cols(), upsilon);
    let params = BTreeMap::from([
        ("S".to_string(), s),
        ("upsilon".to_string(), upsilon),
        ("replicates".to_string(), replicates as f64),
        ("seed".to_string(), seed as f64),
        ("mean_centered_norm".to_string(), mean),
        ("bracket".to_string(), bracket),
    ]);
    let mut report = VerificationReport::new(
        "latala_ratio",
        params,
        mean / bracket,
        cap,
        Direction::AtMost,
        details,
    );
    report.passed = report.observed < cap;
    Ok(report)
}

/// [`latala_ratio_for_pattern`] with the pattern generated from `spec`.
pub fn latala_ratio(spec: &RegimeSpec, replicates: usize, cap: f64) -> Result<VerificationReport> {
    let pattern = make_pattern(spec)?;
    latala_ratio_for_pattern(
        &pattern,
        spec.s,
        spec.regime.upsilon(),
        replicates,
        spec.seed,
        cap,
    )
}

/// One row of the norm-versus-S table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormRow {
    #[serde(rename = "S")]
    pub s: f64,
    pub replicate: usize,
    pub norm: f64,
    pub radius: f64,
}

/// ‖M‖₂ and ρ(M) for `replicates` fresh patterns and masks at each S in
/// `s_grid` (ascending). `template` supplies ρ, κ, the regime and the
/// master seed; its own S is ignored.
pub fn norm_vs_s_experiment(
    template: &RegimeSpec,
    s_grid: &[f64],
    replicates: usize,
    vc: &VarianceComponents,
) -> Result<Vec<NormRow>> {
    if s_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidInput("S grid must be ascending".into()));
    }
    let jobs: Vec<(usize, f64, usize)> = s_grid
        .iter()
        .enumerate()
        .flat_map(|(g, &s)| (0..replicates).map(move |k| (g, s, k)))
        .collect();
    jobs.into_par_iter()
        .map(|(g, s, k)| -> Result<NormRow> {
            let seed = derive_indexed(template.seed, &format!("norm_vs_s/{g}"), k as u64);
            let spec = template.with_s(s).with_seed(seed);
            let pattern = make_pattern(&spec)?;
            let z = sample_z(&pattern, derive_indexed(seed, "z", 0));
            let bundle = analyze(&z, vc, false)?;
            Ok(NormRow {
                s,
                replicate: k,
                norm: bundle.spec_norm,
                radius: bundle.spec_radius.value,
            })
        })
        .collect()
}

/// Median of `values` (mean of the middle pair for even length).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Which spectral summary of M a surrogate check thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralStatistic {
    Norm,
    Radius,
}

/// Finite-S stand-in for a "with probability tending to one" statement:
/// the fraction of replicates whose statistic is ≤ `threshold` must be at
/// least `confidence`.
pub fn spectral_surrogate(
    spec: &RegimeSpec,
    vc: &VarianceComponents,
    statistic: SpectralStatistic,
    threshold: f64,
    confidence: f64,
    replicates: usize,
) -> Result<VerificationReport> {
    let rows = norm_vs_s_experiment(spec, &[spec.s], replicates, vc)?;
    let details: Vec<DetailRow> = rows
        .iter()
        .map(|r| {
            let value = match statistic {
                SpectralStatistic::Norm => r.norm,
                SpectralStatistic::Radius => r.radius,
            };
            row(
                r.replicate,
                &[("norm", r.norm), ("radius", r.radius), ("within", (value <= threshold) as u8 as f64)],
            )
        })
        .collect();
    let fraction = details.iter().map(|d| d.values["within"]).sum::<f64>() / replicates as f64;
    let mut params = spec_parameters(spec, replicates);
    params.insert("threshold".into(), threshold);
    let name = match statistic {
        SpectralStatistic::Norm => "surrogate_norm",
        SpectralStatistic::Radius => "surrogate_radius",
    };
    Ok(VerificationReport::new(
        name,
        params,
        fraction,
        confidence,
        Direction::AtLeast,
        details,
    ))
}

/// Radius threshold 1 − φ(Υ) + δ for the bounded-inhomogeneity regime.
pub fn bounded_inhom_threshold(upsilon: f64, delta: f64) -> f64 {
    1.0 - phi_upsilon(upsilon) + delta
}
