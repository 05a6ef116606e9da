//! Run configuration: TOML file, command-line overrides and the effective values.
//!
//! A config file is a TOML document with `schema_version = 1` and optional
//! `[sampler]`, `[prior]`, `[simulation]` and `[curves]` tables. Every key is
//! optional; anything left out keeps its built-in default, and command-line
//! flags take precedence over the file.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use bablr::model::{NormalPrior, ScalePrior};
use bablr::simgen::{SimDesign, TruthInputs};
use bablr::{Parameterization, PriorConfig, SamplerConfig};
use serde::{Deserialize, Serialize};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub prior: PriorSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub curves: CurvesSection,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    pub chains: Option<usize>,
    pub warmup: Option<usize>,
    pub samples: Option<usize>,
    pub target_accept: Option<f64>,
    pub max_treedepth: Option<usize>,
    pub seed: Option<u64>,
    pub init_radius: Option<f64>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSection {
    /// `simulation` or `application`.
    pub preset: Option<String>,
    pub parameterization: Option<String>,
    pub cp_lower_bound: Option<f64>,
    /// Parameter name to prior expression, e.g. `sigma_u2 = "lognormal(0,0.2)"`.
    #[serde(default)]
    pub priors: BTreeMap<String, String>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    /// `simulation1` or `simulation2`.
    pub truth: Option<String>,
    pub n_subjects: Option<usize>,
    pub visits: Option<[usize; 2]>,
    pub time_range: Option<[f64; 2]>,
    pub spacing: Option<f64>,
    pub seed: Option<u64>,
    pub replicates: Option<usize>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurvesSection {
    pub grid: Option<String>,
    pub quantiles: Option<Vec<f64>>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if cfg.schema_version != CONFIG_SCHEMA_VERSION {
            bail!(
                "config {} has schema_version {}, this build reads version {CONFIG_SCHEMA_VERSION}",
                path.display(),
                cfg.schema_version
            );
        }
        Ok(cfg)
    }

    pub fn load_optional(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self { schema_version: CONFIG_SCHEMA_VERSION, ..Self::default() }), Self::load)
    }
}

/// Applies file values then flag values onto a sampler configuration.
pub fn sampler_config(file: &SamplerSection, flags: &SamplerSection) -> Result<SamplerConfig> {
    let mut c = SamplerConfig::default();
    for s in [file, flags] {
        c.chains = s.chains.unwrap_or(c.chains);
        c.warmup = s.warmup.unwrap_or(c.warmup);
        c.samples = s.samples.unwrap_or(c.samples);
        c.target_accept = s.target_accept.unwrap_or(c.target_accept);
        c.max_treedepth = s.max_treedepth.unwrap_or(c.max_treedepth);
        c.seed = s.seed.unwrap_or(c.seed);
        c.init_radius = s.init_radius.unwrap_or(c.init_radius);
    }
    c.validate()?;
    Ok(c)
}

/// Builds the prior from a preset, then applies file and flag overrides.
/// `no_bound` removes any change-point lower bound after all other settings.
pub fn prior_config(file: &PriorSection, flags: &PriorSection, no_bound: bool) -> Result<PriorConfig> {
    let preset = flags.preset.as_deref().or(file.preset.as_deref()).unwrap_or("simulation");
    let mut c = match preset {
        "simulation" => PriorConfig::simulation(),
        "application" => PriorConfig::application(),
        other => bail!("unknown prior preset `{other}` (expected simulation or application)"),
    };
    for s in [file, flags] {
        if let Some(p) = &s.parameterization {
            c.parameterization = p.parse::<Parameterization>()?;
        }
        if let Some(l) = s.cp_lower_bound {
            c.cp_lower_bound = Some(l);
        }
        for (name, expr) in &s.priors {
            apply_prior(&mut c, name, expr)?;
        }
    }
    if no_bound {
        c.cp_lower_bound = None;
    }
    c.validate()?;
    Ok(c)
}

/// Parses `name=family(args)` from the command line.
pub fn parse_prior_override(s: &str) -> Result<(String, String)> {
    let (name, expr) = s.split_once('=').with_context(|| format!("expected name=family(args), got `{s}`"))?;
    Ok((name.trim().to_string(), expr.trim().to_string()))
}

pub fn apply_prior(c: &mut PriorConfig, name: &str, expr: &str) -> Result<()> {
    let normal = || expr.parse::<NormalPrior>().with_context(|| format!("prior for {name}"));
    let scale = || expr.parse::<ScalePrior>().with_context(|| format!("prior for {name}"));
    match name {
        "beta1_0" => c.beta1_0 = normal()?,
        "beta2_0" => c.beta2_0 = normal()?,
        "beta3_0" => c.beta3_0 = normal()?,
        "omega_0" => c.omega_0 = normal()?,
        "sigma_y" => c.sigma_y = scale()?,
        "sigma_u1" => c.sigma_u[0] = scale()?,
        "sigma_u2" => c.sigma_u[1] = scale()?,
        "sigma_u3" => c.sigma_u[2] = scale()?,
        "sigma_u4" => c.sigma_u[3] = scale()?,
        _ => bail!("unknown prior target `{name}`"),
    }
    Ok(())
}

pub fn truth_inputs(name: &str) -> Result<TruthInputs> {
    match name {
        "simulation1" => Ok(TruthInputs::simulation1()),
        "simulation2" => Ok(TruthInputs::simulation2()),
        "application" => Ok(TruthInputs::application_like()),
        other => bail!("unknown truth `{other}` (expected simulation1, simulation2 or application)"),
    }
}

/// Simulation design from file then flags. The default time axis is ages
/// 40 to 85 for the `application` truth and the centered axis otherwise, where
/// the simulation truths place the change point near 10.
pub fn sim_design(truth: &str, file: &SimulationSection, flags: &SimulationSection) -> Result<SimDesign> {
    let mut d = if truth == "application" { SimDesign::default() } else { SimDesign::centered(100, 0) };
    for s in [file, flags] {
        d.n_subjects = s.n_subjects.unwrap_or(d.n_subjects);
        if let Some([a, b]) = s.visits {
            d.visits = (a, b);
        }
        if let Some([a, b]) = s.time_range {
            d.time_range = (a, b);
        }
        d.spacing = s.spacing.unwrap_or(d.spacing);
        d.seed = s.seed.unwrap_or(d.seed);
    }
    d.validate()?;
    Ok(d)
}

/// Parses `start:stop:step` or a comma-separated list into a grid of times.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let num = |t: &str| t.trim().parse::<f64>().with_context(|| format!("bad number `{t}` in grid `{spec}`"));
    let grid = if let [a, b, step] = spec.split(':').collect::<Vec<_>>()[..] {
        let (a, b, step) = (num(a)?, num(b)?, num(step)?);
        if !(step > 0.0) || !(b >= a) {
            bail!("grid `{spec}` needs step > 0 and stop >= start");
        }
        let n = ((b - a) / step + 1e-9).floor() as usize;
        (0..=n).map(|k| a + k as f64 * step).collect()
    } else {
        spec.split(',').map(num).collect::<Result<Vec<_>>>()?
    };
    if grid.is_empty() || grid.iter().any(|v| !v.is_finite()) {
        bail!("grid `{spec}` is empty or non-finite");
    }
    Ok(grid)
}

pub fn parse_quantiles(spec: &str) -> Result<Vec<f64>> {
    let qs = spec
        .split(',')
        .map(|t| t.trim().parse::<f64>().with_context(|| format!("bad quantile `{t}`")))
        .collect::<Result<Vec<_>>>()?;
    check_quantiles(&qs)?;
    Ok(qs)
}

pub fn check_quantiles(qs: &[f64]) -> Result<()> {
    if qs.is_empty() || qs.iter().any(|&q| !(q > 0.0 && q < 1.0)) || qs.windows(2).any(|w| w[1] <= w[0]) {
        bail!("quantiles must lie in (0, 1) and be strictly increasing, got {qs:?}");
    }
    Ok(())
}

/// Every effective setting of a run, written next to its outputs.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub settings: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Self {
            tool: "bablr",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            settings: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.settings.insert(key.to_string(), value.to_string());
    }

    pub fn sampler(&mut self, c: &SamplerConfig) {
        self.set("sampler.chains", c.chains);
        self.set("sampler.warmup", c.warmup);
        self.set("sampler.samples", c.samples);
        self.set("sampler.target_accept", c.target_accept);
        self.set("sampler.max_treedepth", c.max_treedepth);
        self.set("sampler.seed", c.seed);
        self.set("sampler.init_radius", c.init_radius);
        self.set("sampler.initial_step_size", c.initial_step_size);
        self.set("sampler.adapt", c.adapt);
    }

    pub fn prior(&mut self, c: &PriorConfig) {
        self.set("prior.beta1_0", c.beta1_0);
        self.set("prior.beta2_0", c.beta2_0);
        self.set("prior.beta3_0", format!("half_{}", c.beta3_0));
        self.set("prior.omega_0", c.omega_0);
        self.set("prior.sigma_y", c.sigma_y);
        for (k, p) in c.sigma_u.iter().enumerate() {
            self.set(&format!("prior.sigma_u{}", k + 1), p);
        }
        self.set("prior.parameterization", c.parameterization);
        self.set("prior.cp_lower_bound", c.cp_lower_bound.map_or("none".to_string(), |l| l.to_string()));
    }

    pub fn design(&mut self, d: &SimDesign) {
        self.set("simulation.n_subjects", d.n_subjects);
        self.set("simulation.visits", format!("{},{}", d.visits.0, d.visits.1));
        self.set("simulation.time_range", format!("{},{}", d.time_range.0, d.time_range.1));
        self.set("simulation.spacing", d.spacing);
        self.set("simulation.seed", d.seed);
    }
}
