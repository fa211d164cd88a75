//! Gibbs and collapsed Gibbs sampling for two-factor crossed random
//! effects models with Bernoulli missingness, exact construction of the
//! collapsed sampler's autoregression matrix, relaxation-time analysis,
//! MCMC diagnostics, and empirical checks of the concentration and
//! random-matrix bounds behind the sampler's scalability.

pub mod autoregression;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod io;
pub mod missingness;
pub mod model;
pub mod rng;
pub mod samplers;
pub mod spectral;
pub mod theory_lab;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use experiment::{run_experiment, Command, Overrides};
pub use missingness::{Regime, RegimeSpec};
pub use model::{LatentState, ObservationSet, SparsePattern, VarianceComponents};
pub use samplers::{ChainTrace, SamplerConfig, SamplerKind};
