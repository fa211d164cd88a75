//! Experiment configuration (TOML).
//!
//! Relative paths in a config file are resolved against the file's
//! directory. Precedence: command-line flags, then the file, then the
//! defaults below.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::missingness::{EffectScales, RegimeSpec};
use crate::model::VarianceComponents;
use crate::samplers::{Init, SamplerKind};
use crate::theory_lab::{SpectralStatistic, DEFAULT_LATALA_CAP};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every random stream is derived from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Missingness regime for simulated data (and for `verify`).
    pub regime: Option<RegimeSpec>,
    #[serde(default)]
    pub simulation: SimulationSection,
    /// Real ratings; when present they replace simulated data.
    pub ratings: Option<RatingsSection>,
    #[serde(default)]
    pub variance: VarianceSection,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub analyze: AnalyzeSection,
    #[serde(default)]
    pub diagnose: DiagnoseSection,
    #[serde(default)]
    pub verify: VerifySection,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub a0: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma_e: f64,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            a0: 2.0,
            sigma1: 1.0,
            sigma2: 1.0,
            sigma_e: 1.0,
        }
    }
}

impl SimulationSection {
    pub fn scales(&self) -> Result<EffectScales> {
        EffectScales::new(self.sigma1, self.sigma2, self.sigma_e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatingsSection {
    pub path: PathBuf,
    pub max_rows: Option<usize>,
}

/// Starting (or, with `fix_precisions`, fixed) variance components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VarianceSection {
    pub sigma1_sq: f64,
    pub sigma2_sq: f64,
    pub sigma_e_sq: f64,
}

impl Default for VarianceSection {
    fn default() -> Self {
        Self {
            sigma1_sq: 1.0,
            sigma2_sq: 1.0,
            sigma_e_sq: 1.0,
        }
    }
}

impl VarianceSection {
    pub fn components(&self) -> Result<VarianceComponents> {
        VarianceComponents::new(self.sigma1_sq, self.sigma2_sq, self.sigma_e_sq)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    pub kinds: Vec<SamplerKind>,
    pub iterations: usize,
    pub burn_in: usize,
    pub fix_precisions: bool,
    pub init: Init,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            kinds: vec![SamplerKind::Vanilla, SamplerKind::Collapsed],
            iterations: 10_000,
            burn_in: 1_000,
            fix_precisions: false,
            init: Init::Zeros,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyzeSection {
    /// Also form B₁, B₂ and report max |M − B₂B₁|.
    pub with_factors: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnoseSection {
    /// Directory holding the `sample` outputs; defaults to `out`.
    pub trace_dir: Option<PathBuf>,
    /// Autocorrelations written to acf.csv, lags 0..=max_lag.
    pub max_lag: usize,
}

impl Default for DiagnoseSection {
    fn default() -> Self {
        Self {
            trace_dir: None,
            max_lag: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub checks: Vec<CheckSpec>,
}

fn default_cap() -> f64 {
    DEFAULT_LATALA_CAP
}

fn default_confidence() -> f64 {
    0.95
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case", deny_unknown_fields)]
pub enum CheckSpec {
    /// ‖Z‖₂ ≤ √(max N_i· · max N_·j) on `instances` masks.
    ZNorm { instances: usize },
    /// Row/column sums inside their envelopes.
    Concentration { psi: f64, replicates: usize },
    /// E‖Z − EZ‖₂ over the Latała bracket, once per S.
    Latala {
        s_grid: Vec<f64>,
        replicates: usize,
        #[serde(default = "default_cap")]
        cap: f64,
    },
    /// ‖M‖₂ and ρ(M) over an S grid; passes when the median norm is
    /// nonincreasing in S.
    NormVsS {
        s_grid: Vec<f64>,
        replicates: usize,
    },
    /// Fraction of replicates with the statistic at most `threshold`.
    Surrogate {
        statistic: SpectralStatistic,
        threshold: f64,
        #[serde(default = "default_confidence")]
        confidence: f64,
        replicates: usize,
    },
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse a config file, resolving its relative paths against the
    /// file's directory.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.out);
        if let Some(r) = cfg.ratings.as_mut() {
            resolve(&mut r.path);
        }
        if let Some(d) = cfg.diagnose.trace_dir.as_mut() {
            resolve(d);
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(r) = &self.regime {
            r.validate()?;
        }
        self.simulation.scales()?;
        self.variance.components()?;
        if self.sampler.kinds.is_empty() {
            return Err(Error::Config("sampler.kinds is empty".into()));
        }
        if self.sampler.burn_in >= self.sampler.iterations {
            return Err(Error::Config(format!(
                "sampler.burn_in ({}) must be smaller than sampler.iterations ({})",
                self.sampler.burn_in, self.sampler.iterations
            )));
        }
        if let Some(r) = &self.ratings {
            if r.max_rows == Some(0) {
                return Err(Error::Config("ratings.max_rows must be positive".into()));
            }
        }
        for c in &self.verify.checks {
            let (grid, reps): (&[f64], usize) = match c {
                CheckSpec::ZNorm { instances } => (&[], *instances),
                CheckSpec::Concentration { psi, replicates } => {
                    if !(*psi >= 0.0) {
                        return Err(Error::Config(format!("psi must be nonnegative, got {psi}")));
                    }
                    (&[], *replicates)
                }
                CheckSpec::Latala { s_grid, replicates, .. } => (s_grid, *replicates),
                CheckSpec::NormVsS { s_grid, replicates } => (s_grid, *replicates),
                CheckSpec::Surrogate { confidence, replicates, .. } => {
                    if !(0.0..=1.0).contains(confidence) {
                        return Err(Error::Config(format!("confidence must lie in [0, 1], got {confidence}")));
                    }
                    (&[], *replicates)
                }
            };
            if reps == 0 {
                return Err(Error::Config("verification checks need at least one replicate".into()));
            }
            if grid.iter().any(|s| !(*s >= 1.0)) || grid.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::Config("s_grid must be strictly increasing values >= 1".into()));
            }
        }
        Ok(())
    }
}
