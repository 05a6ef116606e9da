//! Bayesian bent-line regression for longitudinal data.
//!
//! Each subject follows a continuous piecewise-linear trajectory with its own
//! change point; subject parameters are random effects around population
//! values. Posteriors are sampled with a No-U-Turn sampler using dual-averaging
//! step size adaptation and a windowed diagonal mass matrix.
//!
//! Module map:
//! - [`data`]: longitudinal datasets.
//! - [`model`]: bent-line mean, priors, parameter transforms and the log posterior.
//! - [`sampler`]: NUTS transitions, warmup adaptation and multi-chain runs.
//! - [`diagnostics`]: split-R̂ and bulk effective sample size.
//! - [`analysis`]: summaries, trajectory quantiles, correlations and held-out validation.
//! - [`simgen`]: synthetic cohorts and replicate studies.

pub mod analysis;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod model;
pub mod sampler;
pub mod simgen;
pub mod stats;

pub use data::{LongitudinalDataset, SubjectRecord};
pub use error::{BablrError, Result};
pub use model::{
    bent_line_mean, BablrTarget, FixedEffects, ModelParameters, ParameterLayout,
    Parameterization, PriorConfig, ScaleParameters, SubjectEffects,
};
pub use sampler::{run_chains, DrawsStore, LogDensity, SamplerConfig};
