//! Vanilla and collapsed Gibbs sweeps, flat-prior precision updates, and
//! seeded chain runs.
//!
//! One collapsed sweep runs two blocks. Block 1 draws a⁽⁰⁾ from its
//! conditional given a⁽²⁾ with a⁽¹⁾ integrated out, then every a⁽¹⁾_i given
//! (a⁽⁰⁾, a⁽²⁾). Block 2 does the same with the factors swapped. The
//! vanilla sweep draws a⁽⁰⁾ from its full conditional given both effect
//! vectors and then the two effect blocks. Both sweeps touch each observed
//! cell a constant number of times, so a sweep costs O(N + R + C).

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    level_means, level_weights, shrinkage_factors, LatentState, ObservationSet,
    VarianceComponents,
};
use crate::rng::{rng_from_seed, ChainRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Vanilla,
    Collapsed,
}

impl SamplerKind {
    pub fn name(&self) -> &'static str {
        match self {
            SamplerKind::Vanilla => "vanilla",
            SamplerKind::Collapsed => "collapsed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    #[default]
    Zeros,
    /// Effects drawn from their priors and a⁽⁰⁾ overdispersed around the
    /// grand mean of y.
    PriorDraw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub iterations: usize,
    pub burn_in: usize,
    pub fix_precisions: bool,
    pub seed: u64,
    #[serde(default)]
    pub init: Init,
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidInput(format!(
                "burn_in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        Ok(())
    }
}

/// One post-burn-in record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub a0: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub tau_e: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ChainTrace {
    pub records: Vec<TraceRecord>,
}

/// Names of the traced scalars, in column order.
pub const TRACE_PARAMETERS: [&str; 6] = ["a0", "mu1", "mu2", "tau1", "tau2", "tauE"];

impl ChainTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Column of one traced scalar by name (see [`TRACE_PARAMETERS`]).
    pub fn series(&self, name: &str) -> Option<Vec<f64>> {
        let get: fn(&TraceRecord) -> f64 = match name {
            "a0" => |r| r.a0,
            "mu1" => |r| r.mu1,
            "mu2" => |r| r.mu2,
            "tau1" => |r| r.tau1,
            "tau2" => |r| r.tau2,
            "tauE" => |r| r.tau_e,
            _ => return None,
        };
        Some(self.records.iter().map(get).collect())
    }
}

/// Work done by one sweep, counted in cell visits and scalar draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SweepWork {
    pub cell_visits: u64,
    pub draws: u64,
}

impl SweepWork {
    pub fn total(&self) -> u64 {
        self.cell_visits + self.draws
    }
}

impl std::ops::AddAssign for SweepWork {
    fn add_assign(&mut self, rhs: Self) {
        self.cell_visits += rhs.cell_visits;
        self.draws += rhs.draws;
    }
}

/// Quantities that depend only on the data and the variance components.
/// Rebuilt whenever the precisions change.
struct SweepCache {
    ytilde1: Vec<f64>,
    ytilde2: Vec<f64>,
    s1: Vec<f64>,
    s2: Vec<f64>,
    s1_total: f64,
    s2_total: f64,
}

impl SweepCache {
    fn new(obs: &ObservationSet, vc: &VarianceComponents) -> Result<Self> {
        let (ytilde1, ytilde2) = level_means(obs);
        let (s1, s2) = shrinkage_factors(obs, vc);
        // validates that neither factor is degenerate
        level_weights(&s1, &s2)?;
        let s1_total = s1.iter().sum();
        let s2_total = s2.iter().sum();
        Ok(Self {
            ytilde1,
            ytilde2,
            s1,
            s2,
            s1_total,
            s2_total,
        })
    }
}

fn normal(rng: &mut impl Rng, mean: f64, var: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    mean + var.sqrt() * z
}

/// Row averages (Σ_j a2_j Z_ij)/N_i· of the other factor's effects, 0 on
/// empty rows.
fn other_factor_row_means(obs: &ObservationSet, a2: &[f64], work: &mut SweepWork) -> Vec<f64> {
    let z = obs.pattern();
    (0..obs.rows())
        .map(|i| {
            let cols = z.row(i);
            work.cell_visits += cols.len() as u64;
            if cols.is_empty() {
                0.0
            } else {
                cols.iter().map(|&j| a2[j]).sum::<f64>() / cols.len() as f64
            }
        })
        .collect()
}

fn other_factor_col_means(obs: &ObservationSet, a1: &[f64], work: &mut SweepWork) -> Vec<f64> {
    let z = obs.pattern();
    (0..obs.cols())
        .map(|j| {
            let rows = z.col(j);
            work.cell_visits += rows.len() as u64;
            if rows.is_empty() {
                0.0
            } else {
                rows.iter().map(|&i| a1[i]).sum::<f64>() / rows.len() as f64
            }
        })
        .collect()
}

/// Draw one factor's effects given a⁽⁰⁾ and the other factor's row/column
/// averages: a_k ~ N(s_k (ỹ_k − a0 − m_k), σ_k² σ_E² / (N_k σ_k² + σ_E²)).
/// For an empty level s_k = 0 and the draw is from the prior N(0, σ_k²).
#[allow(clippy::too_many_arguments)]
fn draw_effects(
    out: &mut [f64],
    counts: &[u64],
    s: &[f64],
    ytilde: &[f64],
    other_means: &[f64],
    a0: f64,
    sigma_sq: f64,
    sigma_e_sq: f64,
    rng: &mut impl Rng,
    work: &mut SweepWork,
) {
    for k in 0..out.len() {
        let n = counts[k] as f64;
        let mean = s[k] * (ytilde[k] - a0 - other_means[k]);
        let var = sigma_e_sq * sigma_sq / (n * sigma_sq + sigma_e_sq);
        out[k] = normal(rng, mean, var);
    }
    work.draws += out.len() as u64;
}

/// Collapsed a⁽⁰⁾ draw: N(Σ s_k(ỹ_k − m_k)/Σ s, σ²/Σ s).
fn draw_collapsed_a0(
    s: &[f64],
    s_total: f64,
    ytilde: &[f64],
    other_means: &[f64],
    sigma_sq: f64,
    rng: &mut impl Rng,
) -> f64 {
    let num: f64 = s
        .iter()
        .zip(ytilde)
        .zip(other_means)
        .map(|((s, y), m)| s * (y - m))
        .sum();
    normal(rng, num / s_total, sigma_sq / s_total)
}

fn collapsed_sweep_cached(
    state: &mut LatentState,
    obs: &ObservationSet,
    vc: &VarianceComponents,
    cache: &SweepCache,
    rng: &mut impl Rng,
) -> SweepWork {
    let mut work = SweepWork::default();

    let m1 = other_factor_row_means(obs, &state.a2, &mut work);
    state.a0 = draw_collapsed_a0(&cache.s1, cache.s1_total, &cache.ytilde1, &m1, vc.sigma1_sq, rng);
    draw_effects(
        &mut state.a1,
        obs.row_counts(),
        &cache.s1,
        &cache.ytilde1,
        &m1,
        state.a0,
        vc.sigma1_sq,
        vc.sigma_e_sq,
        rng,
        &mut work,
    );

    let m2 = other_factor_col_means(obs, &state.a1, &mut work);
    state.a0 = draw_collapsed_a0(&cache.s2, cache.s2_total, &cache.ytilde2, &m2, vc.sigma2_sq, rng);
    draw_effects(
        &mut state.a2,
        obs.col_counts(),
        &cache.s2,
        &cache.ytilde2,
        &m2,
        state.a0,
        vc.sigma2_sq,
        vc.sigma_e_sq,
        rng,
        &mut work,
    );
    work.draws += 2;
    work
}

fn vanilla_sweep_cached(
    state: &mut LatentState,
    obs: &ObservationSet,
    vc: &VarianceComponents,
    cache: &SweepCache,
    rng: &mut impl Rng,
) -> SweepWork {
    let mut work = SweepWork::default();
    let n = obs.total() as f64;

    let resid_sum: f64 = obs
        .cells()
        .map(|(i, j, y)| y - state.a1[i] - state.a2[j])
        .sum();
    work.cell_visits += obs.total() as u64;
    state.a0 = normal(rng, resid_sum / n, vc.sigma_e_sq / n);

    let m1 = other_factor_row_means(obs, &state.a2, &mut work);
    draw_effects(
        &mut state.a1,
        obs.row_counts(),
        &cache.s1,
        &cache.ytilde1,
        &m1,
        state.a0,
        vc.sigma1_sq,
        vc.sigma_e_sq,
        rng,
        &mut work,
    );
    let m2 = other_factor_col_means(obs, &state.a1, &mut work);
    draw_effects(
        &mut state.a2,
        obs.col_counts(),
        &cache.s2,
        &cache.ytilde2,
        &m2,
        state.a0,
        vc.sigma2_sq,
        vc.sigma_e_sq,
        rng,
        &mut work,
    );
    work.draws += 1;
    work
}

fn check_state(state: &LatentState, obs: &ObservationSet) -> Result<()> {
    if state.a1.len() != obs.rows() || state.a2.len() != obs.cols() {
        return Err(Error::InvalidInput(format!(
            "state has {}x{} effects, data is {}x{}",
            state.a1.len(),
            state.a2.len(),
            obs.rows(),
            obs.cols()
        )));
    }
    if !state.is_finite() {
        return Err(Error::InvalidInput("state has non-finite entries".into()));
    }
    Ok(())
}

/// One collapsed Gibbs sweep, updating `state` in place.
pub fn collapsed_sweep(
    state: &mut LatentState,
    obs: &ObservationSet,
    vc: &VarianceComponents,
    rng: &mut impl Rng,
) -> Result<SweepWork> {
    check_state(state, obs)?;
    let cache = SweepCache::new(obs, vc)?;
    Ok(collapsed_sweep_cached(state, obs, vc, &cache, rng))
}

/// One vanilla Gibbs sweep (a⁽⁰⁾ from its flat-prior full conditional,
/// then a⁽¹⁾, then a⁽²⁾), updating `state` in place.
pub fn vanilla_sweep(
    state: &mut LatentState,
    obs: &ObservationSet,
    vc: &VarianceComponents,
    rng: &mut impl Rng,
) -> Result<SweepWork> {
    if obs.total() == 0 {
        return Err(Error::NoObservations);
    }
    check_state(state, obs)?;
    let cache = SweepCache::new(obs, vc)?;
    Ok(vanilla_sweep_cached(state, obs, vc, &cache, rng))
}

/// Posterior of a precision under a flat prior on τ^(-1/2):
/// Gamma(shape = (n − 1)/2, rate = ss/2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionPosterior {
    pub shape: f64,
    pub rate: f64,
}

impl PrecisionPosterior {
    pub fn new(n: usize, sum_sq: f64, what: &str) -> Result<Self> {
        if n <= 1 {
            return Err(Error::ImproperPosterior(format!(
                "{what}: need more than one term, got {n}"
            )));
        }
        if !(sum_sq > 0.0 && sum_sq.is_finite()) {
            return Err(Error::ImproperPosterior(format!(
                "{what}: sum of squares is {sum_sq}"
            )));
        }
        Ok(Self {
            shape: (n as f64 - 1.0) / 2.0,
            rate: sum_sq / 2.0,
        })
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn ln_pdf(&self, tau: f64) -> f64 {
        self.shape * self.rate.ln() - ln_gamma(self.shape) + (self.shape - 1.0) * tau.ln()
            - self.rate * tau
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        Gamma::new(self.shape, 1.0 / self.rate)
            .expect("shape and rate validated positive")
            .sample(rng)
    }
}

/// Lanczos approximation (g = 7, n = 9), accurate to ~1e-15 relative for
/// positive arguments.
fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (k, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + k as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Conditional posteriors of (τ₁, τ₂, τ_E) given the current state.
pub fn precision_posteriors(
    state: &LatentState,
    obs: &ObservationSet,
) -> Result<[PrecisionPosterior; 3]> {
    let ss1: f64 = state.a1.iter().map(|v| v * v).sum();
    let ss2: f64 = state.a2.iter().map(|v| v * v).sum();
    let sse: f64 = state.residuals(obs).map(|e| e * e).sum();
    Ok([
        PrecisionPosterior::new(state.a1.len(), ss1, "tau1")?,
        PrecisionPosterior::new(state.a2.len(), ss2, "tau2")?,
        PrecisionPosterior::new(obs.total(), sse, "tauE")?,
    ])
}

/// Draw (τ₁, τ₂, τ_E) from their flat-prior conditionals.
pub fn precision_update(
    state: &LatentState,
    obs: &ObservationSet,
    rng: &mut impl Rng,
) -> Result<VarianceComponents> {
    let [p1, p2, pe] = precision_posteriors(state, obs)?;
    let (t1, t2, te) = (p1.sample(rng), p2.sample(rng), pe.sample(rng));
    VarianceComponents::from_precisions(t1, t2, te)
}

fn initial_state(
    obs: &ObservationSet,
    vc: &VarianceComponents,
    init: Init,
    rng: &mut impl Rng,
) -> LatentState {
    match init {
        Init::Zeros => LatentState::zeros(obs.rows(), obs.cols()),
        Init::PriorDraw => {
            let ybar = if obs.total() == 0 {
                0.0
            } else {
                obs.responses().iter().sum::<f64>() / obs.total() as f64
            };
            let spread = vc.sigma1_sq + vc.sigma2_sq + vc.sigma_e_sq;
            LatentState {
                a0: normal(rng, ybar, spread),
                a1: (0..obs.rows()).map(|_| normal(rng, 0.0, vc.sigma1_sq)).collect(),
                a2: (0..obs.cols()).map(|_| normal(rng, 0.0, vc.sigma2_sq)).collect(),
            }
        }
    }
}

/// A running chain: state, variance components, and RNG.
pub struct Chain<'a> {
    obs: &'a ObservationSet,
    kind: SamplerKind,
    fix_precisions: bool,
    vc: VarianceComponents,
    state: LatentState,
    cache: SweepCache,
    rng: ChainRng,
    work: SweepWork,
}

impl<'a> Chain<'a> {
    pub fn new(obs: &'a ObservationSet, vc0: VarianceComponents, cfg: &SamplerConfig) -> Result<Self> {
        vc0.validate()?;
        if cfg.kind == SamplerKind::Vanilla && obs.total() == 0 {
            return Err(Error::NoObservations);
        }
        let mut rng = rng_from_seed(cfg.seed);
        let state = initial_state(obs, &vc0, cfg.init, &mut rng);
        let cache = SweepCache::new(obs, &vc0)?;
        Ok(Self {
            obs,
            kind: cfg.kind,
            fix_precisions: cfg.fix_precisions,
            vc: vc0,
            state,
            cache,
            rng,
            work: SweepWork::default(),
        })
    }

    pub fn with_state(mut self, state: LatentState) -> Result<Self> {
        check_state(&state, self.obs)?;
        self.state = state;
        Ok(self)
    }

    /// One full iteration: both effect blocks, then the precisions when
    /// they are being sampled.
    pub fn step(&mut self) -> Result<()> {
        let w = match self.kind {
            SamplerKind::Collapsed => {
                collapsed_sweep_cached(&mut self.state, self.obs, &self.vc, &self.cache, &mut self.rng)
            }
            SamplerKind::Vanilla => {
                vanilla_sweep_cached(&mut self.state, self.obs, &self.vc, &self.cache, &mut self.rng)
            }
        };
        self.work += w;
        if !self.fix_precisions {
            self.vc = precision_update(&self.state, self.obs, &mut self.rng)?;
            self.cache = SweepCache::new(self.obs, &self.vc)?;
        }
        Ok(())
    }

    pub fn state(&self) -> &LatentState {
        &self.state
    }

    pub fn variance_components(&self) -> &VarianceComponents {
        &self.vc
    }

    pub fn work(&self) -> SweepWork {
        self.work
    }

    fn record(&self, iter: usize) -> TraceRecord {
        TraceRecord {
            iter,
            a0: self.state.a0,
            mu1: self.state.mu1(),
            mu2: self.state.mu2(),
            tau1: self.vc.tau1(),
            tau2: self.vc.tau2(),
            tau_e: self.vc.tau_e(),
        }
    }
}

/// Run `cfg.iterations` iterations and keep the records after burn-in.
pub fn run_chain(
    obs: &ObservationSet,
    vc0: &VarianceComponents,
    cfg: &SamplerConfig,
) -> Result<ChainTrace> {
    cfg.validate()?;
    let mut chain = Chain::new(obs, *vc0, cfg)?;
    let mut records = Vec::with_capacity(cfg.iterations - cfg.burn_in);
    for iter in 0..cfg.iterations {
        chain.step()?;
        if iter >= cfg.burn_in {
            records.push(chain.record(iter));
        }
    }
    Ok(ChainTrace { records })
}

/// One sweep of either sampler from a fresh RNG seeded with `seed`, for
/// callers that do not hold an RNG.
pub fn seeded_sweep(
    kind: SamplerKind,
    state: &mut LatentState,
    obs: &ObservationSet,
    vc: &VarianceComponents,
    seed: u64,
) -> Result<SweepWork> {
    let mut rng = rng_from_seed(seed);
    match kind {
        SamplerKind::Collapsed => collapsed_sweep(state, obs, vc, &mut rng),
        SamplerKind::Vanilla => vanilla_sweep(state, obs, vc, &mut rng),
    }
}
