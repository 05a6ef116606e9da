//! Subcommand implementations. Each one reads its inputs, does the work, and
//! writes every artifact atomically together with a run manifest.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use bablr::analysis::{
    holdout_validation, individual_trajectory, population_quantile_curves, random_effect_correlations, summarize,
    CurveMode, ParameterSummary, QuantileCurves,
};
use bablr::diagnostics::DiagnosticsReport;
use bablr::simgen::{run_sim_study, simulate_dataset, StudyConfig, TruthRecord};
use bablr::{run_chains, BablrTarget, DrawsStore, ParameterLayout, PriorConfig, SamplerConfig};
use serde::Serialize;

use crate::config::{FileConfig, Manifest, PriorSection, SamplerSection, SimulationSection};
use crate::{config, io};

const POPULATION_NAMES: [&str; 9] = ParameterLayout::POPULATION_NAMES;

/// R̂ at or above this value fails the strict convergence gate.
pub const RHAT_GATE: f64 = 1.05;

/// How a command finished when it did not hit an error.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Done,
    /// Artifacts were written but some parameters did not converge.
    NotConverged { failures: Vec<String> },
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(manifest)?;
    bytes.push(b'\n');
    io::write_atomic(path, &bytes)
}

#[derive(Serialize)]
struct DiagnosticsJson<'a> {
    schema_version: u32,
    rhat_threshold: f64,
    max_rhat: Option<f64>,
    min_ess_bulk: Option<f64>,
    divergences: usize,
    treedepth_hits: usize,
    max_treedepth: usize,
    accept_per_chain: &'a [f64],
    step_size_per_chain: &'a [f64],
    parameters: Vec<ParameterJson<'a>>,
}

#[derive(Serialize)]
struct ParameterJson<'a> {
    name: &'a str,
    rhat: Option<f64>,
    ess_bulk: Option<f64>,
}

fn write_diagnostics(path: &Path, store: &DrawsStore, report: &DiagnosticsReport) -> Result<()> {
    let json = DiagnosticsJson {
        schema_version: 1,
        rhat_threshold: RHAT_GATE,
        max_rhat: report.max_rhat(),
        min_ess_bulk: report.min_ess_bulk(),
        divergences: report.divergences,
        treedepth_hits: report.treedepth_hits,
        max_treedepth: report.max_treedepth,
        accept_per_chain: &report.accept_per_chain,
        step_size_per_chain: store.step_sizes(),
        parameters: report
            .parameters
            .iter()
            .map(|p| ParameterJson { name: &p.name, rhat: p.rhat, ess_bulk: p.ess_bulk })
            .collect(),
    };
    let mut bytes = serde_json::to_vec_pretty(&json)?;
    bytes.push(b'\n');
    io::write_atomic(path, &bytes)
}

/// Population-parameter summary in the layout of a results table.
fn write_summary(path: &Path, summaries: &[ParameterSummary], report: &DiagnosticsReport) -> Result<()> {
    let rows = POPULATION_NAMES.iter().map(|name| {
        let s = summaries.iter().find(|s| s.name == *name);
        let d = report.parameters.iter().find(|p| p.name == *name);
        let mut row = vec![name.to_string()];
        match s {
            Some(s) => row.extend([s.mean, s.sd, s.median, s.lower, s.upper].map(|v| v.to_string())),
            None => row.extend(std::iter::repeat_n("NA".to_string(), 5)),
        }
        row.push(fmt_opt(d.and_then(|d| d.rhat)));
        row.push(fmt_opt(d.and_then(|d| d.ess_bulk)));
        row
    });
    io::write_csv(path, &["parameter", "mean", "sd", "median", "q2.5", "q97.5", "rhat", "ess_bulk"], rows)
}

fn gate(report: &DiagnosticsReport, strict: bool) -> Outcome {
    let failures: Vec<String> = report
        .rhat_failures(RHAT_GATE)
        .iter()
        .map(|p| format!("{} (rhat {})", p.name, fmt_opt(p.rhat)))
        .collect();
    if failures.is_empty() {
        return Outcome::Done;
    }
    log::warn!("{} parameter(s) with rhat >= {RHAT_GATE} or undefined", failures.len());
    if strict {
        Outcome::NotConverged { failures }
    } else {
        Outcome::Done
    }
}

pub struct FitRequest {
    pub data: PathBuf,
    pub out_dir: PathBuf,
    pub config: Option<PathBuf>,
    pub sampler: SamplerSection,
    pub prior: PriorSection,
    pub no_cp_lower_bound: bool,
    pub holdout_fraction: Option<f64>,
    pub strict: bool,
}

/// Fits the model and writes draws, summary, diagnostics, manifest and
/// (with a holdout fraction) the removed observations.
pub fn fit(req: &FitRequest) -> Result<Outcome> {
    let file = FileConfig::load_optional(req.config.as_deref())?;
    let sampler = config::sampler_config(&file.sampler, &req.sampler)?;
    let prior = config::prior_config(&file.prior, &req.prior, req.no_cp_lower_bound)?;
    let mut data = io::ingest_csv(&req.data)?;
    let mut manifest = Manifest::new("fit");
    manifest.inputs.insert("data".into(), req.data.display().to_string());
    if let Some(c) = &req.config {
        manifest.inputs.insert("config".into(), c.display().to_string());
    }

    let fraction = req.holdout_fraction.unwrap_or(0.0);
    manifest.set("fit.holdout_fraction", fraction);
    manifest.set("fit.strict", req.strict);
    manifest.set("fit.holdout_min_remaining", 2);
    manifest.set("fit.holdout_seed", sampler.seed);
    if fraction > 0.0 {
        let (kept, heldout) = data.hold_out_last(fraction, 2, sampler.seed)?;
        let path = req.out_dir.join("heldout.csv");
        io::write_heldout(&path, &heldout)?;
        manifest.outputs.push("heldout.csv".into());
        log::info!("held out {} observations", heldout.len());
        data = kept;
    }
    let store = fit_dataset(data, prior.clone(), &sampler)?;
    manifest.sampler(&sampler);
    manifest.prior(&prior);
    let outcome = write_fit_outputs(&req.out_dir, &store, sampler.max_treedepth, req.strict, &mut manifest)?;
    write_manifest(&req.out_dir.join("manifest.json"), &manifest)?;
    Ok(outcome)
}

pub fn fit_dataset(
    data: bablr::LongitudinalDataset,
    prior: PriorConfig,
    sampler: &SamplerConfig,
) -> Result<DrawsStore> {
    log::info!(
        "fitting {} subjects / {} observations with {} chains x {}+{}",
        data.n_subjects(),
        data.n_observations(),
        sampler.chains,
        sampler.warmup,
        sampler.samples
    );
    let target = BablrTarget::new(Arc::new(data), prior)?;
    Ok(run_chains(&target, sampler)?)
}

fn write_fit_outputs(
    out_dir: &Path,
    store: &DrawsStore,
    max_treedepth: usize,
    strict: bool,
    manifest: &mut Manifest,
) -> Result<Outcome> {
    let report = DiagnosticsReport::from_draws(store, max_treedepth);
    io::write_draws(&out_dir.join("draws.csv"), store)?;
    write_summary(&out_dir.join("summary.csv"), &summarize(store), &report)?;
    write_diagnostics(&out_dir.join("diagnostics.json"), store, &report)?;
    manifest.outputs.extend(["draws.csv", "summary.csv", "diagnostics.json"].map(String::from));
    log::info!(
        "max rhat {}, min bulk ESS {}, {} divergences",
        fmt_opt(report.max_rhat()),
        fmt_opt(report.min_ess_bulk()),
        report.divergences
    );
    Ok(gate(&report, strict))
}

pub struct SummarizeRequest {
    pub draws: Vec<PathBuf>,
    pub labels: Vec<String>,
    pub out_dir: PathBuf,
    pub max_treedepth: usize,
}

/// Summaries and diagnostics for one draws file; with several files, also a
/// side-by-side comparison of population-parameter medians and intervals.
pub fn summarize_cmd(req: &SummarizeRequest) -> Result<Outcome> {
    if req.draws.is_empty() {
        bail!("summarize needs at least one draws file");
    }
    let labels: Vec<String> = if req.labels.is_empty() {
        (1..=req.draws.len()).map(|k| format!("fit{k}")).collect()
    } else if req.labels.len() == req.draws.len() {
        req.labels.clone()
    } else {
        bail!("{} labels given for {} draws files", req.labels.len(), req.draws.len());
    };
    let mut manifest = Manifest::new("summarize");
    let mut tables = Vec::new();
    for (path, label) in req.draws.iter().zip(&labels) {
        let store = io::read_draws(path)?;
        manifest.inputs.insert(format!("draws.{label}"), path.display().to_string());
        let report = DiagnosticsReport::from_draws(&store, req.max_treedepth);
        let summaries = summarize(&store);
        let dir = if req.draws.len() == 1 { req.out_dir.clone() } else { req.out_dir.join(label) };
        write_summary(&dir.join("summary.csv"), &summaries, &report)?;
        write_diagnostics(&dir.join("diagnostics.json"), &store, &report)?;
        let prefix = if req.draws.len() == 1 { String::new() } else { format!("{label}/") };
        manifest.outputs.push(format!("{prefix}summary.csv"));
        manifest.outputs.push(format!("{prefix}diagnostics.json"));
        if store.dim() >= POPULATION_NAMES.len() + 4 * 3 {
            let rows = correlation_rows(&store)?;
            io::write_csv(&dir.join("correlations.csv"), &["pair", "mean", "sd", "skipped_draws"], rows)?;
            manifest.outputs.push(format!("{prefix}correlations.csv"));
        }
        tables.push(summaries);
    }
    if tables.len() > 1 {
        write_comparison(&req.out_dir.join("comparison.csv"), &labels, &tables)?;
        manifest.outputs.push("comparison.csv".into());
    }
    manifest.set("summarize.max_treedepth", req.max_treedepth);
    write_manifest(&req.out_dir.join("manifest.json"), &manifest)?;
    Ok(Outcome::Done)
}

/// One row per population parameter, one `median (lower, upper)` cell per fit.
pub fn comparison_rows(labels: &[String], tables: &[Vec<ParameterSummary>]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["parameter".to_string()];
    header.extend(labels.iter().cloned());
    let rows = POPULATION_NAMES
        .iter()
        .map(|name| {
            let mut row = vec![name.to_string()];
            for t in tables {
                row.push(t.iter().find(|s| s.name == *name).map_or_else(
                    || "NA".to_string(),
                    |s| format!("{} ({}, {})", s.median, s.lower, s.upper),
                ));
            }
            row
        })
        .collect();
    (header, rows)
}

fn write_comparison(path: &Path, labels: &[String], tables: &[Vec<ParameterSummary>]) -> Result<()> {
    let (header, rows) = comparison_rows(labels, tables);
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    io::write_csv(path, &header, rows)
}

pub struct CurvesRequest {
    pub draws: PathBuf,
    pub out: PathBuf,
    pub config: Option<PathBuf>,
    pub grid: Option<String>,
    pub quantiles: Option<String>,
    pub subject: Option<String>,
    pub pooled: bool,
}

/// Population (or single-subject) quantile trajectories in long format.
pub fn curves(req: &CurvesRequest) -> Result<Outcome> {
    let file = FileConfig::load_optional(req.config.as_deref())?;
    let grid_spec = req.grid.clone().or(file.curves.grid.clone()).unwrap_or_else(|| "-25:20:1".into());
    let grid = config::parse_grid(&grid_spec)?;
    let qs = match (&req.quantiles, &file.curves.quantiles) {
        (Some(s), _) => config::parse_quantiles(s)?,
        (None, Some(v)) => {
            config::check_quantiles(v)?;
            v.clone()
        }
        (None, None) => vec![0.1, 0.5, 0.9],
    };
    let store = io::read_draws(&req.draws)?;
    let mode = if req.pooled { CurveMode::PooledDraws } else { CurveMode::MedianTrajectories };
    let curves = match &req.subject {
        Some(id) => individual_trajectory(&store, id, &grid, &qs)?,
        None => population_quantile_curves(&store, &grid, &qs, mode)?,
    };
    write_curves(&req.out, &curves)?;

    let mut manifest = Manifest::new("curves");
    manifest.inputs.insert("draws".into(), req.draws.display().to_string());
    manifest.outputs.push(req.out.display().to_string());
    manifest.set("curves.grid", &grid_spec);
    manifest.set("curves.quantiles", qs.iter().map(f64::to_string).collect::<Vec<_>>().join(","));
    manifest.set("curves.subject", req.subject.as_deref().unwrap_or("all"));
    manifest.set("curves.mode", if req.pooled { "pooled_draws" } else { "median_trajectories" });
    write_manifest(&sibling(&req.out, "manifest.json"), &manifest)?;
    Ok(Outcome::Done)
}

/// `<dir>/<stem>.<name>` next to an output file.
fn sibling(out: &Path, name: &str) -> PathBuf {
    let stem = out.file_stem().map_or_else(|| "out".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.{name}"))
}

pub fn write_curves(path: &Path, curves: &QuantileCurves) -> Result<()> {
    let rows = curves.age_grid.iter().enumerate().flat_map(|(a, age)| {
        curves.quantiles.iter().enumerate().map(move |(q, quant)| {
            vec![age.to_string(), quant.to_string(), curves.values[q][a].to_string()]
        })
    });
    io::write_csv(path, &["age", "quantile", "value"], rows)
}

pub struct ValidateRequest {
    pub draws: PathBuf,
    pub heldout: PathBuf,
    pub out: PathBuf,
}

/// Held-out predictive intervals; returns the coverage alongside the outcome.
pub fn validate(req: &ValidateRequest) -> Result<(Outcome, f64)> {
    let store = io::read_draws(&req.draws)?;
    let heldout = io::read_heldout(&req.heldout)?;
    let report = holdout_validation(&store, &heldout)?;
    let rows = report.points.iter().map(|p| {
        vec![
            p.subject_id.clone(),
            p.time.to_string(),
            p.y.to_string(),
            p.q025.to_string(),
            p.q50.to_string(),
            p.q975.to_string(),
            u8::from(p.inside).to_string(),
        ]
    });
    let inside = report.points.iter().filter(|p| p.inside).count();
    let mut bytes = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut bytes);
        w.write_record(["subject", "time", "y", "q025", "q50", "q975", "inside"])?;
        for r in rows {
            w.write_record(&r)?;
        }
        w.flush()?;
    }
    bytes.extend(format!("# coverage {} ({inside}/{})\n", report.coverage, report.points.len()).into_bytes());
    io::write_atomic(&req.out, &bytes)?;
    println!("coverage {} ({inside}/{})", report.coverage, report.points.len());

    let mut manifest = Manifest::new("validate");
    manifest.inputs.insert("draws".into(), req.draws.display().to_string());
    manifest.inputs.insert("heldout".into(), req.heldout.display().to_string());
    manifest.outputs.push(req.out.display().to_string());
    write_manifest(&sibling(&req.out, "manifest.json"), &manifest)?;
    Ok((Outcome::Done, report.coverage))
}

pub struct SimulateRequest {
    pub out_dir: PathBuf,
    pub config: Option<PathBuf>,
    pub design: SimulationSection,
}

fn truth_rows(record: &TruthRecord, layout: &ParameterLayout) -> Vec<Vec<String>> {
    let f = &record.fixed;
    let s = &record.scales;
    let population = [f.beta1, f.beta2, f.beta3, f.omega, s.sigma_y, s.sigma_u[0], s.sigma_u[1], s.sigma_u[2], s.sigma_u[3]];
    let mut rows: Vec<Vec<String>> =
        POPULATION_NAMES.iter().zip(population).map(|(n, v)| vec![n.to_string(), v.to_string()]).collect();
    if let Some(r) = &record.correlation {
        for (a, b) in bablr::analysis::EFFECT_PAIRS {
            rows.push(vec![format!("rho_u{}_u{}", a + 1, b + 1), r[a][b].to_string()]);
        }
    }
    let names = layout.names();
    for k in 0..4 {
        for (i, v) in record.effects.effect(k).iter().enumerate() {
            rows.push(vec![names[layout.effect_index(k, i)].clone(), v.to_string()]);
        }
    }
    rows
}

/// Simulated cohort plus the truth that generated it.
pub fn simulate(req: &SimulateRequest) -> Result<Outcome> {
    let file = FileConfig::load_optional(req.config.as_deref())?;
    let truth_name =
        req.design.truth.clone().or(file.simulation.truth.clone()).unwrap_or_else(|| "simulation1".into());
    let truth = config::truth_inputs(&truth_name)?;
    let design = config::sim_design(&truth_name, &file.simulation, &req.design)?;
    let (data, record) = simulate_dataset(&truth, &design)?;
    io::write_dataset(&req.out_dir.join("dataset.csv"), &data)?;
    let layout = ParameterLayout::new(data.subject_ids());
    io::write_csv(&req.out_dir.join("truth.csv"), &["parameter", "value"], truth_rows(&record, &layout))?;

    let mut manifest = Manifest::new("simulate");
    manifest.set("simulation.truth", &truth_name);
    manifest.design(&design);
    manifest.outputs.extend(["dataset.csv", "truth.csv"].map(String::from));
    write_manifest(&req.out_dir.join("manifest.json"), &manifest)?;
    Ok(Outcome::Done)
}

pub struct SimStudyRequest {
    pub out_dir: PathBuf,
    pub config: Option<PathBuf>,
    pub design: SimulationSection,
    pub sampler: SamplerSection,
    pub prior: PriorSection,
    pub no_cp_lower_bound: bool,
}

/// Repeated simulate-and-fit with bias and coverage per parameter.
pub fn sim_study(req: &SimStudyRequest) -> Result<Outcome> {
    let file = FileConfig::load_optional(req.config.as_deref())?;
    let truth_name =
        req.design.truth.clone().or(file.simulation.truth.clone()).unwrap_or_else(|| "simulation1".into());
    let replicates = req.design.replicates.or(file.simulation.replicates).unwrap_or(3);
    let design = config::sim_design(&truth_name, &file.simulation, &req.design)?;
    let sampler = config::sampler_config(&file.sampler, &req.sampler)?;
    let mut prior_flags = req.prior.clone();
    if truth_name == "application" && prior_flags.preset.is_none() && file.prior.preset.is_none() {
        prior_flags.preset = Some("application".into());
    }
    let prior = config::prior_config(&file.prior, &prior_flags, req.no_cp_lower_bound)?;
    let study = StudyConfig {
        replicates,
        truth: config::truth_inputs(&truth_name)?,
        design: design.clone(),
        prior: prior.clone(),
        sampler: sampler.clone(),
        seed: sampler.seed,
    };
    let report = run_sim_study(&study).context("simulation study")?;
    for (r, msg) in &report.failures {
        log::warn!("replicate {r} failed: {msg}");
    }
    let rows = report.rows.iter().map(|r| {
        vec![
            r.name.clone(),
            r.truth.to_string(),
            r.estimate.to_string(),
            r.se.to_string(),
            r.bias.to_string(),
            r.coverage.to_string(),
        ]
    });
    io::write_csv(&req.out_dir.join("study.csv"), &["parameter", "truth", "estimate", "se", "bias", "coverage"], rows)?;
    let reps = report.replicates.iter().map(|r| {
        vec![
            r.index.to_string(),
            r.data_seed.to_string(),
            r.sampler_seed.to_string(),
            fmt_opt(r.max_rhat),
            r.divergences.to_string(),
        ]
    });
    io::write_csv(
        &req.out_dir.join("replicates.csv"),
        &["replicate", "data_seed", "sampler_seed", "max_rhat", "divergences"],
        reps,
    )?;

    let mut manifest = Manifest::new("sim-study");
    manifest.set("simulation.truth", &truth_name);
    manifest.set("simulation.replicates", replicates);
    manifest.design(&design);
    manifest.sampler(&sampler);
    manifest.prior(&prior);
    manifest.outputs.extend(["study.csv", "replicates.csv"].map(String::from));
    write_manifest(&req.out_dir.join("manifest.json"), &manifest)?;
    Ok(Outcome::Done)
}

/// Posterior-mean correlations of the random effects, for reports.
pub fn correlation_rows(store: &DrawsStore) -> Result<Vec<Vec<String>>> {
    Ok(random_effect_correlations(store)?
        .iter()
        .map(|c| vec![c.label(), c.mean.to_string(), c.sd.to_string(), c.skipped.to_string()])
        .collect())
}
