//! Bernoulli missingness: cell probabilities p_ij under the three regimes,
//! the observation mask Z, and synthetic responses.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LatentState, ObservationSet, SparsePattern, VarianceComponents};
use crate::rng::{derive_seed, rng_from_seed};

/// Sweep cap for the almost-balanced constructor.
pub const SINKHORN_MAX_SWEEPS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regime {
    /// p_ij = S/(RC) for every cell.
    Mcar,
    /// p_ij = U_ij S^(1-ρ-κ), U_ij iid uniform on [1, Υ].
    BoundedInhom { upsilon: f64 },
    /// S/(ΥRC) ≤ p_ij ≤ ΥS/(RC) with row and column sums of p within
    /// a factor (1 ± eps_target) of S/R and S/C.
    AlmostBalanced { upsilon: f64, eps_target: f64 },
}

impl Regime {
    pub fn upsilon(&self) -> f64 {
        match *self {
            Regime::Mcar => 1.0,
            Regime::BoundedInhom { upsilon } | Regime::AlmostBalanced { upsilon, .. } => upsilon,
        }
    }

    /// Lower-bound constant Υ′ in 1/Υ′ ≤ p_ij S^(ρ+κ−1).
    pub fn upsilon_lower(&self) -> f64 {
        match *self {
            Regime::AlmostBalanced { upsilon, .. } => upsilon,
            _ => 1.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Regime::Mcar => "mcar",
            Regime::BoundedInhom { .. } => "bounded_inhom",
            Regime::AlmostBalanced { .. } => "almost_balanced",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeSpec {
    /// Target problem size S (need not be an integer, e.g. 10^3.5).
    pub s: f64,
    pub rho: f64,
    pub kappa: f64,
    #[serde(flatten)]
    pub regime: Regime,
    #[serde(default)]
    pub seed: u64,
}

/// ⌈x⌉ guarding against `powf` landing one ulp above an integer.
fn ceil_level_count(x: f64) -> usize {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.max(1.0) {
        r as usize
    } else {
        x.ceil() as usize
    }
}

impl RegimeSpec {
    pub fn new(s: f64, rho: f64, kappa: f64, regime: Regime, seed: u64) -> Result<Self> {
        let spec = Self {
            s,
            rho,
            kappa,
            regime,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s.is_finite() && self.s >= 1.0) {
            return Err(Error::InvalidInput(format!("S must be >= 1, got {}", self.s)));
        }
        check_exponents(self.rho, self.kappa)?;
        match self.regime {
            Regime::Mcar => {}
            Regime::BoundedInhom { upsilon } => {
                if !(upsilon >= 1.0 && upsilon.is_finite()) {
                    return Err(Error::InvalidInput(format!("upsilon must be >= 1, got {upsilon}")));
                }
            }
            Regime::AlmostBalanced {
                upsilon,
                eps_target,
            } => {
                if !(upsilon >= 1.0 && upsilon.is_finite()) {
                    return Err(Error::InvalidInput(format!("upsilon must be >= 1, got {upsilon}")));
                }
                if !(eps_target > 0.0 && eps_target < 0.25) {
                    return Err(Error::InvalidInput(format!(
                        "eps_target must lie in (0, 0.25), got {eps_target}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_s(mut self, s: f64) -> Self {
        self.s = s;
        self
    }

    /// R = ⌈S^ρ⌉.
    pub fn rows(&self) -> usize {
        ceil_level_count(self.s.powf(self.rho))
    }

    /// C = ⌈S^κ⌉.
    pub fn cols(&self) -> usize {
        ceil_level_count(self.s.powf(self.kappa))
    }

    /// S / (RC).
    pub fn mean_density(&self) -> f64 {
        self.s / (self.rows() as f64 * self.cols() as f64)
    }
}

fn check_exponents(rho: f64, kappa: f64) -> Result<()> {
    for (name, v) in [("rho", rho), ("kappa", kappa)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::InvalidInput(format!("{name} must lie in (0, 1), got {v}")));
        }
    }
    Ok(())
}

/// Whether (ρ, κ) lies in the triangle ρ + κ/2 < 1, κ + ρ/2 < 1.
pub fn regime_condition(rho: f64, kappa: f64) -> Result<bool> {
    check_exponents(rho, kappa)?;
    Ok(rho + 0.5 * kappa < 1.0 && kappa + 0.5 * rho < 1.0)
}

/// Dense R×C matrix of cell observation probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityPattern {
    pub p: DMatrix<f64>,
    /// Largest relative deviation of a row or column sum from its target;
    /// only set for almost-balanced patterns.
    pub balance_eps: Option<f64>,
}

impl ProbabilityPattern {
    pub fn uniform(rows: usize, cols: usize, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidInput(format!("probability {p} outside [0, 1]")));
        }
        Ok(Self {
            p: DMatrix::from_element(rows, cols, p),
            balance_eps: None,
        })
    }

    pub fn from_matrix(p: DMatrix<f64>) -> Result<Self> {
        if let Some(bad) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!("probability {bad} outside [0, 1]")));
        }
        Ok(Self {
            p,
            balance_eps: None,
        })
    }

    pub fn rows(&self) -> usize {
        self.p.nrows()
    }

    pub fn cols(&self) -> usize {
        self.p.ncols()
    }

    /// N̄_i· = Σ_j p_ij.
    pub fn expected_row_counts(&self) -> Vec<f64> {
        self.p.row_iter().map(|r| r.sum()).collect()
    }

    /// N̄_·j = Σ_i p_ij.
    pub fn expected_col_counts(&self) -> Vec<f64> {
        self.p.column_iter().map(|c| c.sum()).collect()
    }
}

fn balance_deviation(p: &DMatrix<f64>, row_target: f64, col_target: f64) -> f64 {
    let rows = p
        .row_iter()
        .map(|r| (r.sum() / row_target - 1.0).abs())
        .fold(0.0, f64::max);
    let cols = p
        .column_iter()
        .map(|c| (c.sum() / col_target - 1.0).abs())
        .fold(0.0, f64::max);
    rows.max(cols)
}

/// Alternate row and column scaling toward the targets S/R and S/C,
/// clamping entries into [lo, hi] after each half-sweep.
fn sinkhorn_balance(
    p: &mut DMatrix<f64>,
    row_target: f64,
    col_target: f64,
    lo: f64,
    hi: f64,
    eps_target: f64,
) -> Result<f64> {
    let mut achieved = balance_deviation(p, row_target, col_target);
    for _ in 0..SINKHORN_MAX_SWEEPS {
        if achieved <= eps_target {
            return Ok(achieved);
        }
        for mut row in p.row_iter_mut() {
            let scale = row_target / row.sum();
            row.apply(|v| *v = (*v * scale).clamp(lo, hi));
        }
        for mut col in p.column_iter_mut() {
            let scale = col_target / col.sum();
            col.apply(|v| *v = (*v * scale).clamp(lo, hi));
        }
        achieved = balance_deviation(p, row_target, col_target);
    }
    if achieved <= eps_target {
        Ok(achieved)
    } else {
        Err(Error::SinkhornNonConvergence {
            sweeps: SINKHORN_MAX_SWEEPS,
            achieved,
            target: eps_target,
        })
    }
}

/// Cell probabilities for `spec`. Randomness (regimes 2 and 3) comes
/// from the "pattern" sub-stream of `spec.seed`.
pub fn make_pattern(spec: &RegimeSpec) -> Result<ProbabilityPattern> {
    spec.validate()?;
    let (rows, cols) = (spec.rows(), spec.cols());
    let mut rng = rng_from_seed(derive_seed(spec.seed, "pattern"));
    match spec.regime {
        Regime::Mcar => {
            let p = spec.mean_density();
            if p > 1.0 {
                return Err(Error::SupercriticalDensity { max_p: p });
            }
            ProbabilityPattern::uniform(rows, cols, p)
        }
        Regime::BoundedInhom { upsilon } => {
            let base = spec.s.powf(1.0 - spec.rho - spec.kappa);
            if upsilon * base > 1.0 {
                return Err(Error::SupercriticalDensity {
                    max_p: upsilon * base,
                });
            }
            let p = DMatrix::from_fn(rows, cols, |_, _| {
                (1.0 + (upsilon - 1.0) * rng.random::<f64>()) * base
            });
            ProbabilityPattern::from_matrix(p)
        }
        Regime::AlmostBalanced {
            upsilon,
            eps_target,
        } => {
            let base = spec.mean_density();
            let (lo, hi) = (base / upsilon, base * upsilon);
            if hi > 1.0 {
                return Err(Error::SupercriticalDensity { max_p: hi });
            }
            let mut p = DMatrix::from_fn(rows, cols, |_, _| lo + (hi - lo) * rng.random::<f64>());
            let achieved = sinkhorn_balance(
                &mut p,
                spec.s / rows as f64,
                spec.s / cols as f64,
                lo,
                hi,
                eps_target,
            )?;
            let mut pattern = ProbabilityPattern::from_matrix(p)?;
            pattern.balance_eps = Some(achieved);
            Ok(pattern)
        }
    }
}

/// Independent Bernoulli draws Z_ij ~ Bern(p_ij), deterministic in `seed`.
pub fn sample_z(pattern: &ProbabilityPattern, seed: u64) -> SparsePattern {
    let mut rng = rng_from_seed(seed);
    let mut entries = Vec::new();
    for i in 0..pattern.rows() {
        for j in 0..pattern.cols() {
            if rng.random::<f64>() < pattern.p[(i, j)] {
                entries.push((i, j));
            }
        }
    }
    SparsePattern::from_entries(pattern.rows(), pattern.cols(), &entries)
        .expect("generated entries are unique and in range")
}

/// Standard deviations used to generate responses. Unlike
/// [`VarianceComponents`], zeros are allowed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectScales {
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma_e: f64,
}

impl EffectScales {
    pub fn new(sigma1: f64, sigma2: f64, sigma_e: f64) -> Result<Self> {
        for v in [sigma1, sigma2, sigma_e] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "standard deviation must be finite and nonnegative, got {v}"
                )));
            }
        }
        Ok(Self {
            sigma1,
            sigma2,
            sigma_e,
        })
    }
}

impl From<&VarianceComponents> for EffectScales {
    fn from(vc: &VarianceComponents) -> Self {
        Self {
            sigma1: vc.sigma1_sq.sqrt(),
            sigma2: vc.sigma2_sq.sqrt(),
            sigma_e: vc.sigma_e_sq.sqrt(),
        }
    }
}

fn draw(rng: &mut impl Rng, sd: f64) -> f64 {
    // Normal::new only fails for non-finite or negative sd.
    Normal::new(0.0, sd).expect("validated scale").sample(rng)
}

/// Draw a⁽¹⁾, a⁽²⁾ and y_ij = a0 + a⁽¹⁾_i + a⁽²⁾_j + e_ij on the observed
/// cells. Returns the data and the true state.
pub fn synthesize_responses(
    z: &SparsePattern,
    scales: EffectScales,
    a0: f64,
    seed: u64,
) -> (ObservationSet, LatentState) {
    let mut rng = rng_from_seed(seed);
    let a1: Vec<f64> = (0..z.rows()).map(|_| draw(&mut rng, scales.sigma1)).collect();
    let a2: Vec<f64> = (0..z.cols()).map(|_| draw(&mut rng, scales.sigma2)).collect();
    let y: Vec<f64> = z
        .entries()
        .map(|(i, j)| a0 + a1[i] + a2[j] + draw(&mut rng, scales.sigma_e))
        .collect();
    let obs = ObservationSet::from_pattern(z.clone(), y).expect("one response per cell");
    (obs, LatentState { a0, a1, a2 })
}

/// A simulated data set with its generating quantities.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub pattern: ProbabilityPattern,
    pub obs: ObservationSet,
    pub truth: LatentState,
}

/// Pattern, mask and responses from the labeled sub-streams of
/// `spec.seed`.
pub fn simulate(spec: &RegimeSpec, scales: EffectScales, a0: f64) -> Result<SimulatedData> {
    let pattern = make_pattern(spec)?;
    let z = sample_z(&pattern, derive_seed(spec.seed, "z"));
    let (obs, truth) = synthesize_responses(&z, scales, a0, derive_seed(spec.seed, "responses"));
    Ok(SimulatedData {
        pattern,
        obs,
        truth,
    })
}
