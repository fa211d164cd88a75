//! Command orchestration: turns an [`ExperimentConfig`] into output files
//! and a run manifest.
//!
//! Outputs per command (all inside the output directory):
//!
//! | command  | files |
//! |----------|-------|
//! | simulate | `ratings.csv`, `truth.json`, `simulate.json` |
//! | sample   | `trace_<sampler>.csv`, `sample.json` |
//! | analyze  | `analyze.json` |
//! | diagnose | `ess.csv`, `acf.csv`, `diagnose.json` |
//! | verify   | `verify.json`, `norm_table.csv` (with a `norm_vs_s` check) |
//!
//! Every command also writes `manifest.json`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autoregression::{analyze, AutoregressionReport};
use crate::config::{CheckSpec, ExperimentConfig};
use crate::diagnostics::{autocorrelation, significance_band, summarize_trace, ParameterSummary, ESS_METHOD};
use crate::error::{Error, Result};
use crate::io::{
    load_ratings_csv, read_trace_csv, sha256_file, sha256_hex, write_ess_table, write_json, write_norm_table,
    write_ratings_csv, write_trace_csv, DatasetSummary, EssRow, LoadOptions,
};
use crate::missingness::{simulate, RegimeSpec};
use crate::model::{LatentState, ObservationSet};
use crate::rng::derive_seed;
use crate::samplers::{run_chain, SamplerConfig, SamplerKind, TRACE_PARAMETERS};
use crate::theory_lab::{
    latala_ratio, median, norm_vs_s_experiment, spectral_surrogate, verify_row_col_concentration,
    verify_z_norm_bound_batch, DetailRow, Direction, VerificationReport,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Simulate,
    Sample,
    Analyze,
    Diagnose,
    Verify,
}

impl Command {
    pub const ALL: [Command; 5] = [
        Command::Simulate,
        Command::Sample,
        Command::Analyze,
        Command::Diagnose,
        Command::Verify,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Sample => "sample",
            Command::Analyze => "analyze",
            Command::Diagnose => "diagnose",
            Command::Verify => "verify",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown command {s:?}")))
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn with_overrides(mut self, o: &Overrides) -> Self {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.out {
            self.out = p.clone();
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub crossed_gibbs: String,
    pub ess_method: String,
    pub target: String,
}

impl Versions {
    fn current() -> Self {
        Self {
            crossed_gibbs: env!("CARGO_PKG_VERSION").to_string(),
            ess_method: ESS_METHOD.to_string(),
            target: format!("{}-{}", std::env::consts::ARCH, std::env::consts::OS),
        }
    }
}

/// Everything needed to rerun a command: the effective configuration
/// (after overrides), its hash, and digests of the files produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Command,
    pub seed: u64,
    pub config_hash: String,
    pub versions: Versions,
    pub wall_time_seconds: f64,
    pub outputs: Vec<OutputFile>,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub manifest: RunManifest,
    /// False only when a `verify` check failed.
    pub passed: bool,
}

/// Execute `command` and write its outputs and manifest under
/// `config.out`.
pub fn run_experiment(command: Command, config: &ExperimentConfig) -> Result<RunOutcome> {
    config.validate()?;
    let start = Instant::now();
    let out = config.out.clone();
    std::fs::create_dir_all(&out)?;
    let (files, passed) = match command {
        Command::Simulate => (cmd_simulate(config, &out)?, true),
        Command::Sample => (cmd_sample(config, &out)?, true),
        Command::Analyze => (cmd_analyze(config, &out)?, true),
        Command::Diagnose => (cmd_diagnose(config, &out)?, true),
        Command::Verify => cmd_verify(config, &out)?,
    };
    let outputs = files
        .iter()
        .map(|f| {
            Ok(OutputFile {
                file: f.clone(),
                sha256: sha256_file(&out.join(f))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = RunManifest {
        command,
        seed: config.seed,
        config_hash: config_hash(config)?,
        versions: Versions::current(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        outputs,
        config: config.clone(),
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(RunOutcome {
        out_dir: out,
        manifest,
        passed,
    })
}

/// SHA-256 of the effective configuration's canonical JSON.
pub fn config_hash(config: &ExperimentConfig) -> Result<String> {
    Ok(sha256_hex(serde_json::to_string(config)?.as_bytes()))
}

/// Structured error body written by front ends on failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub command: String,
    pub kind: String,
    pub message: String,
}

impl ErrorReport {
    pub fn new(command: &str, err: &Error) -> Self {
        let kind = match err {
            Error::InvalidInput(_) => "invalid_input",
            Error::DegenerateFactor { .. } => "degenerate_factor",
            Error::SupercriticalDensity { .. } => "supercritical_density",
            Error::SinkhornNonConvergence { .. } => "sinkhorn_non_convergence",
            Error::NonConvergence { .. } => "non_convergence",
            Error::Eigensolver(_) => "eigensolver",
            Error::NonGeometric(_) => "non_geometric",
            Error::ZeroVariance => "zero_variance",
            Error::ImproperPosterior(_) => "improper_posterior",
            Error::NoObservations => "no_observations",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
            Error::Config(_) => "config",
        };
        Self {
            command: command.to_string(),
            kind: kind.to_string(),
            message: err.to_string(),
        }
    }
}

/// Data set used by `sample` and `analyze`.
struct Dataset {
    obs: ObservationSet,
    /// Nominal problem size: the regime's S for simulated data, N for
    /// ratings.
    s: f64,
    summary: DatasetSummary,
    source: DataSource,
    truth: Option<LatentState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Simulated { regime: RegimeSpec },
    Ratings { path: String },
}

fn need_regime(config: &ExperimentConfig) -> Result<RegimeSpec> {
    config
        .regime
        .map(|r| r.with_seed(derive_seed(config.seed, "data")))
        .ok_or_else(|| Error::Config("this command needs a [regime] section".into()))
}

fn summary_of(obs: &ObservationSet, rows_in_file: usize) -> DatasetSummary {
    let exps = crate::io::implied_exponents(obs.rows(), obs.cols(), obs.total());
    DatasetSummary {
        rows: obs.rows(),
        cols: obs.cols(),
        n: obs.total(),
        rho: exps.map(|e| e.0),
        kappa: exps.map(|e| e.1),
        rows_in_file,
    }
}

fn load_dataset(config: &ExperimentConfig) -> Result<Dataset> {
    if let Some(r) = &config.ratings {
        let d = load_ratings_csv(
            &r.path,
            LoadOptions {
                max_rows: r.max_rows,
                seed: derive_seed(config.seed, "ratings"),
            },
        )?;
        let summary = d.summary();
        return Ok(Dataset {
            s: summary.n as f64,
            summary,
            obs: d.obs,
            source: DataSource::Ratings {
                path: r.path.display().to_string(),
            },
            truth: None,
        });
    }
    let regime = need_regime(config)?;
    let sim = simulate(&regime, config.simulation.scales()?, config.simulation.a0)?;
    Ok(Dataset {
        s: regime.s,
        summary: summary_of(&sim.obs, sim.obs.total()),
        obs: sim.obs,
        source: DataSource::Simulated { regime },
        truth: Some(sim.truth),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SimulateReport {
    source: DataSource,
    data: DatasetSummary,
    simulation: crate::config::SimulationSection,
}

fn cmd_simulate(config: &ExperimentConfig, out: &Path) -> Result<Vec<String>> {
    if config.ratings.is_some() {
        return Err(Error::Config("simulate does not take a [ratings] section".into()));
    }
    let d = load_dataset(config)?;
    write_ratings_csv(&out.join("ratings.csv"), &d.obs)?;
    write_json(&out.join("truth.json"), d.truth.as_ref().expect("simulated"))?;
    write_json(
        &out.join("simulate.json"),
        &SimulateReport {
            source: d.source,
            data: d.summary,
            simulation: config.simulation,
        },
    )?;
    Ok(vec!["ratings.csv".into(), "truth.json".into(), "simulate.json".into()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub sampler: SamplerKind,
    pub seed: u64,
    pub trace: String,
    pub records: usize,
}

/// Contents of `sample.json`; read back by `diagnose`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    #[serde(rename = "S")]
    pub s: f64,
    pub source: DataSource,
    pub data: DatasetSummary,
    pub iterations: usize,
    pub burn_in: usize,
    pub fix_precisions: bool,
    pub chains: Vec<ChainSummary>,
}

fn trace_file(kind: SamplerKind) -> String {
    format!("trace_{}.csv", kind.name())
}

fn cmd_sample(config: &ExperimentConfig, out: &Path) -> Result<Vec<String>> {
    let d = load_dataset(config)?;
    let vc0 = config.variance.components()?;
    let sc = &config.sampler;
    let chains: Vec<ChainSummary> = sc
        .kinds
        .par_iter()
        .map(|&kind| -> Result<ChainSummary> {
            let seed = derive_seed(config.seed, &format!("sampler/{}", kind.name()));
            let cfg = SamplerConfig {
                kind,
                iterations: sc.iterations,
                burn_in: sc.burn_in,
                fix_precisions: sc.fix_precisions,
                seed,
                init: sc.init,
            };
            let trace = run_chain(&d.obs, &vc0, &cfg)?;
            write_trace_csv(&out.join(trace_file(kind)), &trace)?;
            Ok(ChainSummary {
                sampler: kind,
                seed,
                trace: trace_file(kind),
                records: trace.len(),
            })
        })
        .collect::<Result<_>>()?;
    let mut files: Vec<String> = chains.iter().map(|c| c.trace.clone()).collect();
    write_json(
        &out.join("sample.json"),
        &SampleReport {
            s: d.s,
            source: d.source,
            data: d.summary,
            iterations: sc.iterations,
            burn_in: sc.burn_in,
            fix_precisions: sc.fix_precisions,
            chains,
        },
    )?;
    files.push("sample.json".into());
    Ok(files)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AnalyzeReport {
    source: DataSource,
    data: DatasetSummary,
    variance: crate::config::VarianceSection,
    autoregression: AutoregressionReport,
    /// max |M − B₂B₁| when factors were requested.
    factor_identity_error: Option<f64>,
}

fn cmd_analyze(config: &ExperimentConfig, out: &Path) -> Result<Vec<String>> {
    let d = load_dataset(config)?;
    let vc = config.variance.components()?;
    let z = d.obs.pattern();
    let bundle = analyze(z, &vc, config.analyze.with_factors)?;
    let factor_identity_error = bundle
        .factors
        .as_ref()
        .map(|(b1, b2)| (&bundle.m - b2 * b1).amax());
    let ar = AutoregressionReport::new(z, &bundle);
    write_json(
        &out.join("analyze.json"),
        &AnalyzeReport {
            source: d.source,
            data: d.summary,
            variance: config.variance,
            autoregression: ar,
            factor_identity_error,
        },
    )?;
    Ok(vec!["analyze.json".into()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ChainDiagnostics {
    sampler: SamplerKind,
    parameters: Vec<ParameterSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DiagnoseReport {
    #[serde(rename = "S")]
    s: f64,
    ess_method: String,
    /// Half-width of the ±1.96/√n band for autocorrelations.
    acf_band: f64,
    chains: Vec<ChainDiagnostics>,
    /// ESS(collapsed) / ESS(vanilla) per parameter, when both ran.
    ess_ratio: std::collections::BTreeMap<String, f64>,
}

fn cmd_diagnose(config: &ExperimentConfig, out: &Path) -> Result<Vec<String>> {
    let dir = config.diagnose.trace_dir.clone().unwrap_or_else(|| out.to_path_buf());
    let sample_json = dir.join("sample.json");
    let report: SampleReport = serde_json::from_slice(&std::fs::read(&sample_json).map_err(|e| {
        Error::Config(format!("cannot read {} (run `sample` first): {e}", sample_json.display()))
    })?)?;
    let mut ess_rows = Vec::new();
    let mut acf_w = csv::Writer::from_path(out.join("acf.csv"))?;
    acf_w.write_record(["sampler", "parameter", "lag", "acf"])?;
    let mut chains = Vec::new();
    let mut band = f64::NAN;
    for c in &report.chains {
        let trace = read_trace_csv(&dir.join(&c.trace))?;
        band = significance_band(trace.len());
        let parameters = summarize_trace(&trace);
        for p in &parameters {
            if let Some(e) = &p.ess {
                ess_rows.push(EssRow {
                    parameter: p.parameter.clone(),
                    sampler: c.sampler.name().to_string(),
                    s: report.s,
                    ess: e.ess,
                    n: e.n,
                });
            }
        }
        for name in TRACE_PARAMETERS {
            let series = trace.series(name).expect("known parameter");
            let max_lag = config.diagnose.max_lag.min(series.len().saturating_sub(1));
            if max_lag == 0 {
                continue;
            }
            if let Ok(acf) = autocorrelation(&series, max_lag) {
                for (lag, v) in acf.iter().enumerate() {
                    acf_w.write_record([c.sampler.name().to_string(), name.to_string(), lag.to_string(), v.to_string()])?;
                }
            }
        }
        chains.push(ChainDiagnostics {
            sampler: c.sampler,
            parameters,
        });
    }
    acf_w.flush()?;
    let ess_of = |kind: SamplerKind, name: &str| {
        ess_rows
            .iter()
            .find(|r| r.sampler == kind.name() && r.parameter == name)
            .map(|r| r.ess)
    };
    let ess_ratio = TRACE_PARAMETERS
        .iter()
        .filter_map(|&name| {
            let c = ess_of(SamplerKind::Collapsed, name)?;
            let v = ess_of(SamplerKind::Vanilla, name)?;
            Some((name.to_string(), c / v))
        })
        .collect();
    write_ess_table(&out.join("ess.csv"), &ess_rows)?;
    write_json(
        &out.join("diagnose.json"),
        &DiagnoseReport {
            s: report.s,
            ess_method: ESS_METHOD.to_string(),
            acf_band: band,
            chains,
            ess_ratio,
        },
    )?;
    Ok(vec!["ess.csv".into(), "acf.csv".into(), "diagnose.json".into()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct VerifyOutput {
    all_passed: bool,
    regime: RegimeSpec,
    reports: Vec<VerificationReport>,
}

/// Verdict on an ascending-S norm table: the largest rise of the median
/// norm between successive S values must be ≤ 0. Details hold one row
/// per S (`replicate` is the grid index).
pub fn median_trend_report(rows: &[crate::theory_lab::NormRow]) -> VerificationReport {
    let mut grid: Vec<f64> = rows.iter().map(|r| r.s).collect();
    grid.dedup();
    let medians: Vec<f64> = grid
        .iter()
        .map(|&s| median(&rows.iter().filter(|r| r.s == s).map(|r| r.norm).collect::<Vec<_>>()))
        .collect();
    let rise = medians
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    let observed = if rise.is_finite() { rise } else { 0.0 };
    let details = grid
        .iter()
        .zip(&medians)
        .enumerate()
        .map(|(k, (s, m))| DetailRow {
            replicate: k,
            values: [("S".to_string(), *s), ("median_norm".to_string(), *m)].into(),
        })
        .collect();
    VerificationReport {
        check: "norm_median_nonincreasing".into(),
        parameters: [("grid_points".to_string(), grid.len() as f64)].into(),
        observed,
        bound: 0.0,
        direction: Direction::AtMost,
        passed: observed <= 0.0,
        details,
    }
}

fn cmd_verify(config: &ExperimentConfig, out: &Path) -> Result<(Vec<String>, bool)> {
    let base = need_regime(config)?;
    let vc = config.variance.components()?;
    if config.verify.checks.is_empty() {
        return Err(Error::Config("verify needs at least one [[verify.checks]] entry".into()));
    }
    let mut reports = Vec::new();
    let mut files = Vec::new();
    for (k, check) in config.verify.checks.iter().enumerate() {
        let spec = base.with_seed(derive_seed(config.seed, &format!("verify/{k}")));
        match check {
            CheckSpec::ZNorm { instances } => reports.push(verify_z_norm_bound_batch(&spec, *instances)?),
            CheckSpec::Concentration { psi, replicates } => {
                reports.push(verify_row_col_concentration(&spec, *psi, *replicates)?)
            }
            CheckSpec::Latala { s_grid, replicates, cap } => {
                for &s in s_grid {
                    reports.push(latala_ratio(&spec.with_s(s), *replicates, *cap)?);
                }
            }
            CheckSpec::NormVsS { s_grid, replicates } => {
                let rows = norm_vs_s_experiment(&spec, s_grid, *replicates, &vc)?;
                write_norm_table(&out.join("norm_table.csv"), &rows)?;
                files.push("norm_table.csv".to_string());
                reports.push(median_trend_report(&rows));
            }
            CheckSpec::Surrogate {
                statistic,
                threshold,
                confidence,
                replicates,
            } => reports.push(spectral_surrogate(&spec, &vc, *statistic, *threshold, *confidence, *replicates)?),
        }
    }
    let all_passed = reports.iter().all(|r| r.passed);
    write_json(
        &out.join("verify.json"),
        &VerifyOutput {
            all_passed,
            regime: base,
            reports,
        },
    )?;
    files.push("verify.json".into());
    Ok((files, all_passed))
}
