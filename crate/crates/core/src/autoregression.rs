//! The autoregression matrix of the collapsed sampler's a⁽²⁾ chain.
//!
//! With D₁ = diag(N_i· + λ_A), D₂ = diag(N_·j + λ_B) and the weights w⁽¹⁾,
//! w⁽²⁾ from [`crate::model::level_weights`]:
//!
//! ```text
//! M₀ = D₂⁻¹ Zᵀ (I_R − w⁽¹⁾1ᵀ) D₁⁻¹ Z
//! M  = (I_C − w⁽²⁾1ᵀ) M₀            (= B₂ B₁)
//! t_rel = 1 / (1 − ρ(M))
//! ```
//!
//! D₁ and D₂ are only ever held as count vectors.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::missingness::ProbabilityPattern;
use crate::model::{level_weights, pattern_shrinkage, SparsePattern, VarianceComponents};
use crate::spectral::{spectral_norm, spectral_radius, RadiusEstimate};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 100_000;

fn inverse_diag(counts: &[u64], lambda: f64) -> Vec<f64> {
    counts.iter().map(|&n| 1.0 / (n as f64 + lambda)).collect()
}

fn weights(z: &SparsePattern, vc: &VarianceComponents) -> Result<(Vec<f64>, Vec<f64>)> {
    let (s1, s2) = pattern_shrinkage(z, vc);
    level_weights(&s1, &s2)
}

/// M₀ and M (both C×C).
pub fn build_m(z: &SparsePattern, vc: &VarianceComponents) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (w1, w2) = weights(z, vc)?;
    let c = z.cols();
    let d1 = inverse_diag(z.row_counts(), vc.lambda_a());
    let d2 = inverse_diag(z.col_counts(), vc.lambda_b());
    // u = 1ᵀ D₁⁻¹ Z, h = Zᵀ w⁽¹⁾
    let u = z.tr_mul_vec(&d1);
    let h = z.tr_mul_vec(&w1);

    // Row j of M₀: D₂⁻¹_j (Σ_{i ∈ col j} D₁⁻¹_i Z_i· − h_j u).
    let rows: Vec<Vec<f64>> = (0..c)
        .into_par_iter()
        .map(|j| {
            let mut row: Vec<f64> = u.iter().map(|us| -h[j] * us).collect();
            for &i in z.col(j) {
                for &s in z.row(i) {
                    row[s] += d1[i];
                }
            }
            row.iter_mut().for_each(|v| *v *= d2[j]);
            row
        })
        .collect();
    let m0 = DMatrix::from_fn(c, c, |j, s| rows[j][s]);

    // M = M₀ − w⁽²⁾ (1ᵀ M₀)
    let colsum: Vec<f64> = m0.column_iter().map(|col| col.sum()).collect();
    let m = DMatrix::from_fn(c, c, |j, s| m0[(j, s)] - w2[j] * colsum[s]);
    Ok((m, m0))
}

/// B₁ (R×C) and B₂ (C×R): the coefficient matrices of
/// E[a⁽¹⁾ | a⁽²⁾] = B₁a⁽²⁾ + b₁ and E[a⁽²⁾ | a⁽¹⁾] = B₂a⁽¹⁾ + b₂.
pub fn build_b1_b2(z: &SparsePattern, vc: &VarianceComponents) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (w1, w2) = weights(z, vc)?;
    let (r, c) = (z.rows(), z.cols());
    let d1 = inverse_diag(z.row_counts(), vc.lambda_a());
    let d2 = inverse_diag(z.col_counts(), vc.lambda_b());
    let u = z.tr_mul_vec(&d1);
    let l = z.mul_vec(&d2);

    let mut b1 = DMatrix::from_fn(r, c, |i, j| w1[i] * u[j]);
    let mut b2 = DMatrix::from_fn(c, r, |j, i| w2[j] * l[i]);
    for (i, j) in z.entries() {
        b1[(i, j)] -= d1[i];
        b2[(j, i)] -= d2[j];
    }
    Ok((b1, b2))
}

/// t_rel = 1/(1 − ρ).
pub fn relaxation_time(spec_radius: f64) -> Result<f64> {
    if !(spec_radius >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "spectral radius must be nonnegative, got {spec_radius}"
        )));
    }
    if spec_radius >= 1.0 {
        return Err(Error::NonGeometric(spec_radius));
    }
    Ok(1.0 / (1.0 - spec_radius))
}

/// φ(Υ) = 1/Υ³ − (Υ − 1)², the spectral-gap lower bound for the
/// bounded-inhomogeneity regime (meaningful for Υ ≥ 1).
pub fn phi_upsilon(upsilon: f64) -> f64 {
    1.0 / upsilon.powi(3) - (upsilon - 1.0).powi(2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MPrimeSplit {
    Full,
    Factor1,
    Factor2,
}

/// (I − (1/n) D^{1/2} 1 1ᵀ D^{-1/2}) K for D = diag(d).
fn center_rows(k: &mut DMatrix<f64>, d: &[f64]) {
    let n = d.len() as f64;
    let sqrt_d: Vec<f64> = d.iter().map(|v| v.sqrt()).collect();
    for s in 0..k.ncols() {
        let proj: f64 = (0..k.nrows()).map(|i| k[(i, s)] / sqrt_d[i]).sum::<f64>() / n;
        for i in 0..k.nrows() {
            k[(i, s)] -= sqrt_d[i] * proj;
        }
    }
}

/// The deterministic comparison matrices built from the expected pattern
/// (D̄₁ = diag(N̄_i·), D̄₂ = diag(N̄_·j), Z̄ = (p_ij)):
///
/// ```text
/// M′₁ = (I_R − (1/R) D̄₁^{1/2} 1 1ᵀ D̄₁^{-1/2}) D̄₁^{-1/2} Z̄ D̄₂^{-1/2}
/// M′₂ = (I_C − (1/C) D̄₂^{1/2} 1 1ᵀ D̄₂^{-1/2}) D̄₂^{-1/2} Z̄ᵀ D̄₁^{-1/2}
/// M′  = M′₂ M′₁
/// ```
pub fn build_m_prime(pattern: &ProbabilityPattern, split: MPrimeSplit) -> Result<DMatrix<f64>> {
    let nr = pattern.expected_row_counts();
    let nc = pattern.expected_col_counts();
    if nr.iter().chain(nc.iter()).any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidInput(
            "expected row and column sums must be positive".into(),
        ));
    }
    let p = &pattern.p;
    let factor1 = || {
        let mut k = DMatrix::from_fn(p.nrows(), p.ncols(), |i, j| {
            p[(i, j)] / (nr[i] * nc[j]).sqrt()
        });
        center_rows(&mut k, &nr);
        k
    };
    let factor2 = || {
        let mut k = DMatrix::from_fn(p.ncols(), p.nrows(), |j, i| {
            p[(i, j)] / (nr[i] * nc[j]).sqrt()
        });
        center_rows(&mut k, &nc);
        k
    };
    Ok(match split {
        MPrimeSplit::Factor1 => factor1(),
        MPrimeSplit::Factor2 => factor2(),
        MPrimeSplit::Full => factor2() * factor1(),
    })
}

/// M, M₀ and their spectral summaries. B₁ and B₂ are attached on request.
#[derive(Debug, Clone)]
pub struct AutoregressionBundle {
    pub m: DMatrix<f64>,
    pub m0: DMatrix<f64>,
    pub factors: Option<(DMatrix<f64>, DMatrix<f64>)>,
    pub spec_norm: f64,
    pub spec_radius: RadiusEstimate,
    /// `None` when ρ(M) ≥ 1.
    pub t_rel: Option<f64>,
}

/// Build M and its spectral summaries for observation pattern `z`.
pub fn analyze(
    z: &SparsePattern,
    vc: &VarianceComponents,
    with_factors: bool,
) -> Result<AutoregressionBundle> {
    let (m, m0) = build_m(z, vc)?;
    let factors = if with_factors {
        Some(build_b1_b2(z, vc)?)
    } else {
        None
    };
    let spec_norm = spectral_norm(&m, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    let spec_radius = spectral_radius(&m, DEFAULT_TOL)?;
    let t_rel = relaxation_time(spec_radius.value).ok();
    Ok(AutoregressionBundle {
        m,
        m0,
        factors,
        spec_norm,
        spec_radius,
        t_rel,
    })
}

/// JSON summary of an [`AutoregressionBundle`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoregressionReport {
    pub rows: usize,
    pub cols: usize,
    pub nnz: usize,
    pub spec_norm: f64,
    pub spec_radius: f64,
    pub spec_radius_exact: bool,
    pub t_rel: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regime: Option<serde_json::Value>,
}

impl AutoregressionReport {
    pub fn new(z: &SparsePattern, bundle: &AutoregressionBundle) -> Self {
        Self {
            rows: z.rows(),
            cols: z.cols(),
            nnz: z.nnz(),
            spec_norm: bundle.spec_norm,
            spec_radius: bundle.spec_radius.value,
            spec_radius_exact: bundle.spec_radius.exact,
            t_rel: bundle.t_rel,
            regime: None,
        }
    }
}
