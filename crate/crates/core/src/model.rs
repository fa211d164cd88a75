//! Data representation for the two-factor crossed random effects model
//!
//! ```text
//! y_ij = a0 + a1_i + a2_j + e_ij,   observed only where Z_ij = 1
//! ```
//!
//! and the per-level quantities (level means, shrinkage factors, weights)
//! shared by the samplers and the autoregression analysis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sparse binary observation matrix Z, stored row-major (CSR) with a
/// column-major (CSC) permutation for column scans.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsePattern {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    col_ptr: Vec<usize>,
    /// Row index of each entry in column-major order.
    row_idx: Vec<usize>,
    /// Position in the row-major entry list of each column-major entry.
    csc_to_csr: Vec<usize>,
    row_counts: Vec<u64>,
    col_counts: Vec<u64>,
}

impl SparsePattern {
    /// Build from (row, col) pairs in any order. Duplicates and
    /// out-of-range indices are rejected.
    pub fn from_entries(rows: usize, cols: usize, entries: &[(usize, usize)]) -> Result<Self> {
        let mut order: Vec<usize> = (0..entries.len()).collect();
        order.sort_unstable_by_key(|&k| entries[k]);
        let sorted: Vec<(usize, usize)> = order.iter().map(|&k| entries[k]).collect();
        Self::from_sorted(rows, cols, &sorted)
    }

    fn from_sorted(rows: usize, cols: usize, sorted: &[(usize, usize)]) -> Result<Self> {
        let mut row_counts = vec![0u64; rows];
        let mut col_counts = vec![0u64; cols];
        for (k, &(i, j)) in sorted.iter().enumerate() {
            if i >= rows || j >= cols {
                return Err(Error::InvalidInput(format!(
                    "cell ({i}, {j}) outside a {rows}x{cols} design"
                )));
            }
            if k > 0 && sorted[k - 1] == (i, j) {
                return Err(Error::InvalidInput(format!("duplicate cell ({i}, {j})")));
            }
            row_counts[i] += 1;
            col_counts[j] += 1;
        }

        let mut row_ptr = vec![0usize; rows + 1];
        for i in 0..rows {
            row_ptr[i + 1] = row_ptr[i] + row_counts[i] as usize;
        }
        let col_idx: Vec<usize> = sorted.iter().map(|&(_, j)| j).collect();

        let mut col_ptr = vec![0usize; cols + 1];
        for j in 0..cols {
            col_ptr[j + 1] = col_ptr[j] + col_counts[j] as usize;
        }
        let mut next = col_ptr.clone();
        let mut row_idx = vec![0usize; sorted.len()];
        let mut csc_to_csr = vec![0usize; sorted.len()];
        for (k, &(i, j)) in sorted.iter().enumerate() {
            let slot = next[j];
            row_idx[slot] = i;
            csc_to_csr[slot] = k;
            next[j] += 1;
        }

        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            col_ptr,
            row_idx,
            csc_to_csr,
            row_counts,
            col_counts,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Total number of observed cells N.
    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row_counts(&self) -> &[u64] {
        &self.row_counts
    }

    pub fn col_counts(&self) -> &[u64] {
        &self.col_counts
    }

    /// Column indices of the observed cells in row `i`.
    pub fn row(&self, i: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    /// Row indices of the observed cells in column `j`.
    pub fn col(&self, j: usize) -> &[usize] {
        &self.row_idx[self.col_ptr[j]..self.col_ptr[j + 1]]
    }

    /// Observed cells in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.rows).flat_map(move |i| self.row(i).iter().map(move |&j| (i, j)))
    }

    /// `Z x` for a vector of length C.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|&j| x[j]).sum())
            .collect()
    }

    /// `Zᵀ x` for a vector of length R.
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.cols)
            .map(|j| self.col(j).iter().map(|&i| x[i]).sum())
            .collect()
    }

    /// Dense 0/1 copy, for small-instance oracles and theory checks.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut z = nalgebra::DMatrix::zeros(self.rows, self.cols);
        for (i, j) in self.entries() {
            z[(i, j)] = 1.0;
        }
        z
    }
}

/// Observed responses together with their pattern. Responses are stored
/// in the pattern's row-major entry order.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pattern: SparsePattern,
    y: Vec<f64>,
}

impl ObservationSet {
    /// Build from `(i, j, y_ij)` triplets.
    pub fn new(rows: usize, cols: usize, cells: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, f64)> = cells.to_vec();
        sorted.sort_unstable_by_key(|c| (c.0, c.1));
        if let Some(bad) = sorted.iter().find(|c| !c.2.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite response at ({}, {})",
                bad.0, bad.1
            )));
        }
        let coords: Vec<(usize, usize)> = sorted.iter().map(|c| (c.0, c.1)).collect();
        let pattern = SparsePattern::from_sorted(rows, cols, &coords)?;
        let y = sorted.into_iter().map(|c| c.2).collect();
        Ok(Self { pattern, y })
    }

    /// Attach responses to an existing pattern; `y` follows the pattern's
    /// row-major entry order.
    pub fn from_pattern(pattern: SparsePattern, y: Vec<f64>) -> Result<Self> {
        if y.len() != pattern.nnz() {
            return Err(Error::InvalidInput(format!(
                "{} responses for {} observed cells",
                y.len(),
                pattern.nnz()
            )));
        }
        Ok(Self { pattern, y })
    }

    pub fn pattern(&self) -> &SparsePattern {
        &self.pattern
    }

    pub fn rows(&self) -> usize {
        self.pattern.rows
    }

    pub fn cols(&self) -> usize {
        self.pattern.cols
    }

    pub fn total(&self) -> usize {
        self.pattern.nnz()
    }

    pub fn row_counts(&self) -> &[u64] {
        &self.pattern.row_counts
    }

    pub fn col_counts(&self) -> &[u64] {
        &self.pattern.col_counts
    }

    /// `(j, y_ij)` for the observed cells of row `i`.
    pub fn row_entries(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.pattern.row_ptr[i]..self.pattern.row_ptr[i + 1];
        self.pattern.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.y[range].iter().copied())
    }

    /// `(i, y_ij)` for the observed cells of column `j`.
    pub fn col_entries(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.pattern.col_ptr[j]..self.pattern.col_ptr[j + 1];
        range.map(move |slot| {
            (
                self.pattern.row_idx[slot],
                self.y[self.pattern.csc_to_csr[slot]],
            )
        })
    }

    /// `(i, j, y_ij)` in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.pattern
            .entries()
            .zip(self.y.iter().copied())
            .map(|((i, j), y)| (i, j, y))
    }

    pub fn responses(&self) -> &[f64] {
        &self.y
    }
}

/// σ₁², σ₂², σ_E². All strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents {
    pub sigma1_sq: f64,
    pub sigma2_sq: f64,
    pub sigma_e_sq: f64,
}

impl VarianceComponents {
    pub fn new(sigma1_sq: f64, sigma2_sq: f64, sigma_e_sq: f64) -> Result<Self> {
        let vc = Self {
            sigma1_sq,
            sigma2_sq,
            sigma_e_sq,
        };
        vc.validate()?;
        Ok(vc)
    }

    pub fn from_precisions(tau1: f64, tau2: f64, tau_e: f64) -> Result<Self> {
        Self::new(1.0 / tau1, 1.0 / tau2, 1.0 / tau_e)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma1_sq", self.sigma1_sq),
            ("sigma2_sq", self.sigma2_sq),
            ("sigma_e_sq", self.sigma_e_sq),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// λ_A = σ_E² / σ₁².
    pub fn lambda_a(&self) -> f64 {
        self.sigma_e_sq / self.sigma1_sq
    }

    /// λ_B = σ_E² / σ₂².
    pub fn lambda_b(&self) -> f64 {
        self.sigma_e_sq / self.sigma2_sq
    }

    pub fn tau1(&self) -> f64 {
        1.0 / self.sigma1_sq
    }

    pub fn tau2(&self) -> f64 {
        1.0 / self.sigma2_sq
    }

    pub fn tau_e(&self) -> f64 {
        1.0 / self.sigma_e_sq
    }
}

/// Mutable chain state (a⁽⁰⁾, a⁽¹⁾, a⁽²⁾).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    pub a0: f64,
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
}

impl LatentState {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            a0: 0.0,
            a1: vec![0.0; rows],
            a2: vec![0.0; cols],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.a0.is_finite()
            && self.a1.iter().all(|v| v.is_finite())
            && self.a2.iter().all(|v| v.is_finite())
    }

    /// μ₁ = mean of a⁽¹⁾.
    pub fn mu1(&self) -> f64 {
        mean(&self.a1)
    }

    /// μ₂ = mean of a⁽²⁾.
    pub fn mu2(&self) -> f64 {
        mean(&self.a2)
    }

    /// e_ij = y_ij − a0 − a1_i − a2_j over the observed cells.
    pub fn residuals<'a>(&'a self, obs: &'a ObservationSet) -> impl Iterator<Item = f64> + 'a {
        obs.cells()
            .map(move |(i, j, y)| y - self.a0 - self.a1[i] - self.a2[j])
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Per-level means ỹ⁽¹⁾ (length R) and ỹ⁽²⁾ (length C). Levels without
/// observations get 0.
pub fn level_means(obs: &ObservationSet) -> (Vec<f64>, Vec<f64>) {
    let ytilde1 = (0..obs.rows())
        .map(|i| {
            let n = obs.row_counts()[i];
            if n == 0 {
                0.0
            } else {
                obs.row_entries(i).map(|(_, y)| y).sum::<f64>() / n as f64
            }
        })
        .collect();
    let ytilde2 = (0..obs.cols())
        .map(|j| {
            let n = obs.col_counts()[j];
            if n == 0 {
                0.0
            } else {
                obs.col_entries(j).map(|(_, y)| y).sum::<f64>() / n as f64
            }
        })
        .collect();
    (ytilde1, ytilde2)
}

fn shrink(counts: &[u64], lambda: f64) -> Vec<f64> {
    counts
        .iter()
        .map(|&n| {
            let n = n as f64;
            n / (n + lambda)
        })
        .collect()
}

/// Shrinkage factors s⁽¹⁾_i = N_i·/(N_i·+λ_A) and s⁽²⁾_j = N_·j/(N_·j+λ_B).
pub fn shrinkage_factors(obs: &ObservationSet, vc: &VarianceComponents) -> (Vec<f64>, Vec<f64>) {
    pattern_shrinkage(obs.pattern(), vc)
}

pub(crate) fn pattern_shrinkage(z: &SparsePattern, vc: &VarianceComponents) -> (Vec<f64>, Vec<f64>) {
    (
        shrink(z.row_counts(), vc.lambda_a()),
        shrink(z.col_counts(), vc.lambda_b()),
    )
}

fn normalize(s: &[f64], factor: u8) -> Result<Vec<f64>> {
    let total: f64 = s.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateFactor { factor });
    }
    Ok(s.iter().map(|v| v / total).collect())
}

/// Weights w⁽ᵏ⁾ proportional to the shrinkage factors, each summing to 1.
pub fn level_weights(s1: &[f64], s2: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    Ok((normalize(s1, 1)?, normalize(s2, 2)?))
}
