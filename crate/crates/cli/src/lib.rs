//! Command-line front end for bent-line random change-point models.
//!
//! Subcommands: `fit`, `summarize`, `curves`, `validate`, `simulate` and
//! `sim-study`. Every run is determined by its inputs, config and seed, and
//! writes a manifest listing every effective setting.

pub mod commands;
pub mod config;
pub mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use crate::commands::Outcome;
use crate::config::{PriorSection, SamplerSection, SimulationSection};

/// Exit status when artifacts were written but the convergence gate failed.
pub const EXIT_NOT_CONVERGED: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "bablr", version, about = "Bayesian bent-line regression with random change points")]
pub struct Cli {
    /// Log level (error, warn, info, debug).
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the model to a subject_id,time,outcome CSV.
    Fit(FitArgs),
    /// Summaries and diagnostics from one or more draws files.
    Summarize(SummarizeArgs),
    /// Quantile trajectories over a time grid.
    Curves(CurvesArgs),
    /// Predictive-interval coverage of held-out observations.
    Validate(ValidateArgs),
    /// Simulate a cohort from built-in truths.
    Simulate(SimulateArgs),
    /// Repeated simulate-and-fit with bias and coverage.
    SimStudy(SimStudyArgs),
}

#[derive(Debug, Args, Default)]
pub struct SamplerFlags {
    /// Number of chains [default: 4].
    #[arg(long)]
    pub chains: Option<usize>,
    /// Warmup iterations per chain [default: 5000].
    #[arg(long)]
    pub warmup: Option<usize>,
    /// Post-warmup draws per chain [default: 5000].
    #[arg(long)]
    pub samples: Option<usize>,
    /// Step-size adaptation target (adapt_delta).
    #[arg(long)]
    pub target_accept: Option<f64>,
    /// Maximum NUTS tree depth [default: 10].
    #[arg(long)]
    pub max_treedepth: Option<usize>,
    /// Sampler seed; chain c uses stream c [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Half-width of the uniform initialization box on the unconstrained scale.
    #[arg(long)]
    pub init_radius: Option<f64>,
}

impl SamplerFlags {
    fn section(&self) -> SamplerSection {
        SamplerSection {
            chains: self.chains,
            warmup: self.warmup,
            samples: self.samples,
            target_accept: self.target_accept,
            max_treedepth: self.max_treedepth,
            seed: self.seed,
            init_radius: self.init_radius,
        }
    }
}

#[derive(Debug, Args, Default)]
pub struct PriorFlags {
    /// Base prior set: simulation or application.
    #[arg(long)]
    pub preset: Option<String>,
    /// Override one prior, e.g. `--prior sigma_u2=lognormal(0,0.2)`. Repeatable.
    #[arg(long = "prior", value_name = "NAME=FAMILY(ARGS)")]
    pub priors: Vec<String>,
    /// centered or non_centered.
    #[arg(long)]
    pub parameterization: Option<String>,
    /// Change points are constrained to lie above this time.
    #[arg(long, allow_hyphen_values = true)]
    pub cp_lower_bound: Option<f64>,
    /// Remove any change-point lower bound set by the preset or config.
    #[arg(long, conflicts_with = "cp_lower_bound")]
    pub no_cp_lower_bound: bool,
}

impl PriorFlags {
    fn section(&self) -> Result<PriorSection> {
        let mut s = PriorSection {
            preset: self.preset.clone(),
            parameterization: self.parameterization.clone(),
            cp_lower_bound: self.cp_lower_bound,
            ..Default::default()
        };
        for p in &self.priors {
            let (name, expr) = config::parse_prior_override(p)?;
            s.priors.insert(name, expr);
        }
        Ok(s)
    }
}

#[derive(Debug, Args, Default)]
pub struct DesignFlags {
    /// simulation1 (independent effects) or simulation2 (correlated effects).
    #[arg(long)]
    pub truth: Option<String>,
    #[arg(long)]
    pub n_subjects: Option<usize>,
    /// Visit-count range as `min,max`.
    #[arg(long, value_parser = parse_usize_pair)]
    pub visits: Option<[usize; 2]>,
    /// Time range as `start,end`.
    #[arg(long, value_parser = parse_f64_pair, allow_hyphen_values = true)]
    pub time_range: Option<[f64; 2]>,
    #[arg(long)]
    pub spacing: Option<f64>,
    /// Seed for data generation.
    #[arg(long)]
    pub data_seed: Option<u64>,
}

impl DesignFlags {
    fn section(&self, replicates: Option<usize>) -> SimulationSection {
        SimulationSection {
            truth: self.truth.clone(),
            n_subjects: self.n_subjects,
            visits: self.visits,
            time_range: self.time_range,
            spacing: self.spacing,
            seed: self.data_seed,
            replicates,
        }
    }
}

fn parse_pair<T: std::str::FromStr>(s: &str) -> std::result::Result<[T; 2], String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected `a,b`, got `{s}`"))?;
    let p = |t: &str| t.trim().parse::<T>().map_err(|_| format!("bad value `{t}` in `{s}`"));
    Ok([p(a)?, p(b)?])
}

fn parse_usize_pair(s: &str) -> std::result::Result<[usize; 2], String> {
    parse_pair(s)
}

fn parse_f64_pair(s: &str) -> std::result::Result<[f64; 2], String> {
    parse_pair(s)
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Input CSV with columns subject_id, time, outcome.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub sampler: SamplerFlags,
    #[command(flatten)]
    pub prior: PriorFlags,
    /// Hold out the last observation of this fraction of subjects (written to heldout.csv).
    #[arg(long)]
    pub holdout_fraction: Option<f64>,
    /// Exit successfully even when some R-hat is at or above 1.05.
    #[arg(long)]
    pub no_strict: bool,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    /// Draws file; repeat to compare several fits.
    #[arg(long, required = true)]
    pub draws: Vec<PathBuf>,
    /// Column label per draws file, in the same order.
    #[arg(long = "label")]
    pub labels: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Tree depth counted as saturated in the diagnostics.
    #[arg(long, default_value_t = 10)]
    pub max_treedepth: usize,
}

#[derive(Debug, Args)]
pub struct CurvesArgs {
    #[arg(long)]
    pub draws: PathBuf,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `start:stop:step` or a comma-separated list of times.
    #[arg(long, allow_hyphen_values = true)]
    pub grid: Option<String>,
    /// Comma-separated quantiles in (0, 1), strictly increasing.
    #[arg(long)]
    pub quantiles: Option<String>,
    /// Bands for one subject instead of population curves.
    #[arg(long)]
    pub subject: Option<String>,
    /// Population quantiles over all draws of all subjects instead of over
    /// each subject's posterior-median trajectory.
    #[arg(long)]
    pub pooled: bool,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub draws: PathBuf,
    /// CSV of held-out observations (subject_id, time, outcome).
    #[arg(long)]
    pub heldout: PathBuf,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub design: DesignFlags,
}

#[derive(Debug, Args)]
pub struct SimStudyArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[command(flatten)]
    pub design: DesignFlags,
    #[command(flatten)]
    pub sampler: SamplerFlags,
    #[command(flatten)]
    pub prior: PriorFlags,
}

/// Runs a parsed command line and maps the result to an exit status.
pub fn run(cli: Cli) -> ExitCode {
    match dispatch(cli.command) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged { failures }) => {
            eprintln!("error: convergence gate failed (rhat >= {}) for:", commands::RHAT_GATE);
            for f in failures.iter().take(20) {
                eprintln!("  {f}");
            }
            if failures.len() > 20 {
                eprintln!("  ... and {} more", failures.len() - 20);
            }
            eprintln!("outputs were written; rerun with --no-strict to accept them");
            ExitCode::from(EXIT_NOT_CONVERGED)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

pub fn dispatch(command: Command) -> Result<Outcome> {
    match command {
        Command::Fit(a) => commands::fit(&commands::FitRequest {
            data: a.data,
            out_dir: a.out,
            config: a.config,
            sampler: a.sampler.section(),
            prior: a.prior.section()?,
            no_cp_lower_bound: a.prior.no_cp_lower_bound,
            holdout_fraction: a.holdout_fraction,
            strict: !a.no_strict,
        }),
        Command::Summarize(a) => commands::summarize_cmd(&commands::SummarizeRequest {
            draws: a.draws,
            labels: a.labels,
            out_dir: a.out,
            max_treedepth: a.max_treedepth,
        }),
        Command::Curves(a) => commands::curves(&commands::CurvesRequest {
            draws: a.draws,
            out: a.out,
            config: a.config,
            grid: a.grid,
            quantiles: a.quantiles,
            subject: a.subject,
            pooled: a.pooled,
        }),
        Command::Validate(a) => {
            commands::validate(&commands::ValidateRequest { draws: a.draws, heldout: a.heldout, out: a.out })
                .map(|(o, _)| o)
        }
        Command::Simulate(a) => commands::simulate(&commands::SimulateRequest {
            out_dir: a.out,
            config: a.config,
            design: a.design.section(None),
        }),
        Command::SimStudy(a) => commands::sim_study(&commands::SimStudyRequest {
            out_dir: a.out,
            config: a.config,
            design: a.design.section(a.replicates),
            sampler: a.sampler.section(),
            prior: a.prior.section()?,
            no_cp_lower_bound: a.prior.no_cp_lower_bound,
        }),
    }
}
