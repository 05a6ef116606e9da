//! Synthetic cohorts from the bent-line model and replicate recovery studies.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;

use crate::analysis::{random_effect_correlations, summarize, ParameterSummary, EFFECT_PAIRS};
use crate::data::{LongitudinalDataset, SubjectRecord};
use crate::diagnostics::DiagnosticsReport;
use crate::error::{BablrError, Result};
use crate::model::{
    bent_line_mean, BablrTarget, FixedEffects, ParameterLayout, PriorConfig, ScaleParameters, SubjectEffects,
};
use crate::sampler::{run_chains, SamplerConfig};
use crate::stats::{mean, std_normal_cdf, std_normal_inv_cdf, variance};

/// Generating values for a synthetic cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthInputs {
    pub fixed: FixedEffects,
    pub scales: ScaleParameters,
    /// Correlation of `(u1, u2, u3, u4)` before truncation; independent when `None`.
    pub correlation: Option<[[f64; 4]; 4]>,
    /// Lower bound on subject change points, matching the fitted model.
    pub cp_lower_bound: Option<f64>,
}

impl TruthInputs {
    /// Population values used for the parameter-recovery simulation.
    pub fn simulation1() -> Self {
        Self {
            fixed: FixedEffects { beta1: -0.0059, beta2: -0.0052, beta3: -0.0085, omega: 10.0 },
            scales: ScaleParameters { sigma_y: 0.30, sigma_u: [0.64, 0.02, 0.15, 10.0] },
            correlation: None,
            cp_lower_bound: None,
        }
    }

    /// Correlations of the random effects in reporting order
    /// `(1,2), (1,3), (1,4), (2,3), (2,4), (3,4)`.
    pub const SIMULATION2_CORRELATIONS: [f64; 6] = [0.807, 0.160, -0.553, 0.077, -0.423, -0.404];

    /// The recovery simulation with correlated random effects.
    pub fn simulation2() -> Self {
        Self { correlation: Some(correlation_matrix(Self::SIMULATION2_CORRELATIONS)), ..Self::simulation1() }
    }

    /// Cohort resembling the age-scale application: posterior medians of the
    /// main application fit, ages as the time axis, change points above 40.
    pub fn application_like() -> Self {
        Self {
            fixed: FixedEffects { beta1: 0.0015, beta2: -0.0045, beta3: -0.0028, omega: 74.95 },
            scales: ScaleParameters { sigma_y: 0.30, sigma_u: [0.80, 0.12, 0.38, 2.88] },
            correlation: None,
            cp_lower_bound: Some(40.0),
        }
    }

    /// Population values in [`ParameterLayout`] order.
    pub fn population_values(&self) -> [f64; 9] {
        let f = &self.fixed;
        let s = &self.scales;
        [f.beta1, f.beta2, f.beta3, f.omega, s.sigma_y, s.sigma_u[0], s.sigma_u[1], s.sigma_u[2], s.sigma_u[3]]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(BablrError::InvalidDesign(m.to_string()));
        if !(self.fixed.beta3 <= 0.0) {
            return bad("beta3_0 must be <= 0");
        }
        if !std::iter::once(self.scales.sigma_y).chain(self.scales.sigma_u).all(|s| s >= 0.0 && s.is_finite()) {
            return bad("scales must be finite and nonnegative");
        }
        if let Some(l) = self.cp_lower_bound {
            if !(self.fixed.omega >= l) {
                return bad("omega_0 lies below the change-point lower bound");
            }
        }
        if let Some(c) = &self.correlation {
            cholesky(c)?;
        }
        Ok(())
    }
}

/// Builds a symmetric unit-diagonal matrix from the six off-diagonal entries.
pub fn correlation_matrix(pairs: [f64; 6]) -> [[f64; 4]; 4] {
    let mut m = [[0.0; 4]; 4];
    for (k, row) in m.iter_mut().enumerate() {
        row[k] = 1.0;
    }
    for (&(a, b), &r) in EFFECT_PAIRS.iter().zip(&pairs) {
        m[a][b] = r;
        m[b][a] = r;
    }
    m
}

/// Lower Cholesky factor. Errors unless the matrix is a symmetric positive
/// semi-definite correlation matrix.
fn cholesky(c: &[[f64; 4]; 4]) -> Result<[[f64; 4]; 4]> {
    let bad = |m: &str| BablrError::InvalidDesign(format!("correlation matrix {m}"));
    for i in 0..4 {
        if (c[i][i] - 1.0).abs() > 1e-12 {
            return Err(bad("must have a unit diagonal"));
        }
        for j in 0..4 {
            if (c[i][j] - c[j][i]).abs() > 1e-12 || !(c[i][j].abs() <= 1.0) {
                return Err(bad("must be symmetric with entries in [-1, 1]"));
            }
        }
    }
    let mut l = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = c[i][i] - s;
                if d < -1e-10 {
                    return Err(bad("is not positive semi-definite"));
                }
                l[i][i] = d.max(0.0).sqrt();
            } else {
                l[i][j] = if l[j][j] > 0.0 { (c[i][j] - s) / l[j][j] } else { 0.0 };
            }
        }
    }
    Ok(l)
}

/// Standard normal conditioned on `x <= b`.
fn std_normal_below<R: Rng + ?Sized>(b: f64, rng: &mut R) -> f64 {
    if b > -5.0 {
        let p_max = std_normal_cdf(b);
        let u: f64 = rng.random();
        std_normal_inv_cdf((u * p_max).max(f64::MIN_POSITIVE)).min(b)
    } else {
        // Exponential-proposal rejection sampler for the far tail.
        let a = -b;
        let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
        loop {
            let e: f64 = rng.sample(Exp1);
            let x = a + e / lambda;
            let u: f64 = rng.random();
            if u <= (-(x - lambda).powi(2) / 2.0).exp() {
                return -x;
            }
        }
    }
}

/// Values actually used to generate a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthRecord {
    pub fixed: FixedEffects,
    pub scales: ScaleParameters,
    pub correlation: Option<[[f64; 4]; 4]>,
    pub effects: SubjectEffects,
}

/// Visit schedule of a synthetic cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct SimDesign {
    pub n_subjects: usize,
    /// Inclusive range of visit counts per subject.
    pub visits: (usize, usize),
    pub time_range: (f64, f64),
    /// Years between consecutive visits.
    pub spacing: f64,
    pub seed: u64,
}

impl Default for SimDesign {
    fn default() -> Self {
        Self { n_subjects: 100, visits: (3, 7), time_range: (40.0, 85.0), spacing: 2.0, seed: 0 }
    }
}

impl SimDesign {
    /// Ages 40 to 85 centred at 65, the axis on which a population change point near 10 is plausible.
    pub fn centered(n_subjects: usize, seed: u64) -> Self {
        Self { n_subjects, time_range: (-25.0, 20.0), seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(BablrError::InvalidDesign(m));
        let (lo, hi) = self.time_range;
        if self.n_subjects == 0 {
            return bad("n_subjects must be at least 1".into());
        }
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return bad(format!("invalid time range [{lo}, {hi}]"));
        }
        if self.visits.0 == 0 || self.visits.0 > self.visits.1 {
            return bad(format!("invalid visit range {:?}", self.visits));
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return bad(format!("spacing must be positive, got {}", self.spacing));
        }
        let span = (self.visits.1 - 1) as f64 * self.spacing;
        if span > hi - lo {
            return bad(format!("{} visits every {} years do not fit in [{lo}, {hi}]", self.visits.1, self.spacing));
        }
        Ok(())
    }
}

/// Draws a cohort from the bent-line model.
///
/// Random effects are generated one at a time in the order `u1, u2, u4, u3`
/// from their conditional normals given the effects already drawn. The change
/// point is truncated at the lower bound when one is set, and the slope
/// decrement is truncated so every subject has `beta3_i <= 0`.
pub fn simulate_dataset(truth: &TruthInputs, design: &SimDesign) -> Result<(LongitudinalDataset, TruthRecord)> {
    truth.validate()?;
    design.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(design.seed);
    let identity = correlation_matrix([0.0; 6]);
    let corr = truth.correlation.unwrap_or(identity);
    const ORDER: [usize; 4] = [0, 1, 3, 2];
    let permuted: [[f64; 4]; 4] = std::array::from_fn(|i| std::array::from_fn(|j| corr[ORDER[i]][ORDER[j]]));
    let chol = cholesky(&permuted)?;
    let sd = truth.scales.sigma_u;
    let fixed = truth.fixed;
    let (t_lo, t_hi) = design.time_range;

    let mut effects = SubjectEffects::zeros(design.n_subjects);
    let mut subjects = Vec::with_capacity(design.n_subjects);
    for i in 0..design.n_subjects {
        let n_i = rng.random_range(design.visits.0..=design.visits.1);
        let span = (n_i - 1) as f64 * design.spacing;
        let start = if t_hi - t_lo > span { rng.random_range(t_lo..=t_hi - span) } else { t_lo };
        let times: Vec<f64> = (0..n_i).map(|j| start + j as f64 * design.spacing).collect();

        // Standardized effects are `L e` with `e` iid normal; `e` is drawn one
        // coordinate at a time so each truncation acts on its conditional law.
        let mut e = [0.0; 4];
        for (pos, &k) in ORDER.iter().enumerate() {
            let cond_mean: f64 = (0..pos).map(|m| chol[pos][m] * e[m]).sum();
            let cond_sd = chol[pos][pos];
            let upper = match k {
                2 => Some(-fixed.beta3),
                _ => None,
            };
            let lower = match (k, truth.cp_lower_bound) {
                (3, Some(l)) => Some(l - fixed.omega),
                _ => None,
            };
            e[pos] = if sd[k] == 0.0 || cond_sd == 0.0 {
                0.0
            } else if let Some(u) = upper {
                std_normal_below((u / sd[k] - cond_mean) / cond_sd, &mut rng)
            } else if let Some(l) = lower {
                -std_normal_below(-(l / sd[k] - cond_mean) / cond_sd, &mut rng)
            } else {
                rng.sample(StandardNormal)
            };
            effects.effect_mut(k)[i] = sd[k] * (cond_mean + cond_sd * e[pos]);
        }

        let beta1 = fixed.beta1 + effects.u1[i];
        let beta2 = fixed.beta2 + effects.u2[i];
        let beta3 = (fixed.beta3 + effects.u3[i]).min(0.0);
        let mut omega = fixed.omega + effects.u4[i];
        if let Some(l) = truth.cp_lower_bound {
            omega = omega.max(l);
        }
        effects.u3[i] = beta3 - fixed.beta3;
        effects.u4[i] = omega - fixed.omega;
        let outcomes = times
            .iter()
            .map(|&t| {
                let noise: f64 = rng.sample(StandardNormal);
                bent_line_mean(beta1, beta2, beta3, omega, t) + truth.scales.sigma_y * noise
            })
            .collect();
        subjects.push(SubjectRecord::new(format!("s{:04}", i + 1), times, outcomes));
    }
    let dataset = LongitudinalDataset::new(subjects)?;
    Ok((
        dataset,
        TruthRecord { fixed: truth.fixed, scales: truth.scales, correlation: truth.correlation, effects },
    ))
}

/// Everything needed to run a replicate study.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub replicates: usize,
    pub truth: TruthInputs,
    /// Visit design; its seed is replaced per replicate.
    pub design: SimDesign,
    pub prior: PriorConfig,
    /// Sampler settings; its seed is replaced per replicate.
    pub sampler: SamplerConfig,
    pub seed: u64,
}

/// Aggregate recovery of one quantity across replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub name: String,
    pub truth: f64,
    /// Mean of the posterior means.
    pub estimate: f64,
    /// SD of the posterior means across replicates.
    pub se: f64,
    pub bias: f64,
    /// Fraction of replicates whose 95% interval contains the truth.
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateResult {
    pub index: usize,
    pub data_seed: u64,
    pub sampler_seed: u64,
    /// Population summaries, then correlation summaries when the truth is correlated.
    pub summaries: Vec<ParameterSummary>,
    pub max_rhat: Option<f64>,
    pub divergences: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub rows: Vec<StudyRow>,
    pub replicates: Vec<ReplicateResult>,
    /// Replicates whose fit failed, with the error message.
    pub failures: Vec<(usize, String)>,
}

/// Dataset and sampler seeds of replicate `r`.
pub fn replicate_seeds(seed: u64, r: usize) -> (u64, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r as u64);
    (rng.random(), rng.random())
}

fn run_replicate(config: &StudyConfig, r: usize) -> Result<ReplicateResult> {
    let (data_seed, sampler_seed) = replicate_seeds(config.seed, r);
    let design = SimDesign { seed: data_seed, ..config.design.clone() };
    let (data, _) = simulate_dataset(&config.truth, &design)?;
    let target = BablrTarget::new(Arc::new(data), config.prior.clone())?;
    let sampler = SamplerConfig { seed: sampler_seed, ..config.sampler.clone() };
    let draws = run_chains(&target, &sampler)?;
    let all = summarize(&draws);
    let mut summaries: Vec<ParameterSummary> = all[..ParameterLayout::N_POPULATION].to_vec();
    if config.truth.correlation.is_some() {
        for pair in random_effect_correlations(&draws)? {
            summaries.push(ParameterSummary::from_values(pair.label(), &pair.values));
        }
    }
    let diag = DiagnosticsReport::from_draws(&draws, sampler.max_treedepth);
    Ok(ReplicateResult {
        index: r,
        data_seed,
        sampler_seed,
        summaries,
        max_rhat: diag.max_rhat(),
        divergences: diag.divergences,
    })
}

/// Simulates, fits and summarizes `replicates` datasets.
///
/// A failed replicate is recorded in [`StudyReport::failures`] and excluded
/// from the aggregate rows.
pub fn run_sim_study(config: &StudyConfig) -> Result<StudyReport> {
    if config.replicates == 0 {
        return Err(BablrError::InvalidArgument("replicates must be at least 1".into()));
    }
    config.truth.validate()?;
    config.design.validate()?;
    config.prior.validate()?;
    config.sampler.validate()?;

    let outcomes: Vec<(usize, Result<ReplicateResult>)> =
        (0..config.replicates).into_par_iter().map(|r| (r, run_replicate(config, r))).collect();
    let mut replicates = Vec::new();
    let mut failures = Vec::new();
    for (r, o) in outcomes {
        match o {
            Ok(res) => replicates.push(res),
            Err(e) => {
                log::warn!("replicate {r} failed: {e}");
                failures.push((r, e.to_string()));
            }
        }
    }

    let mut truths: Vec<(String, f64)> = ParameterLayout::POPULATION_NAMES
        .iter()
        .map(|s| s.to_string())
        .zip(config.truth.population_values())
        .collect();
    if let Some(c) = &config.truth.correlation {
        truths.extend(EFFECT_PAIRS.iter().map(|&(a, b)| (format!("rho_u{}_u{}", a + 1, b + 1), c[a][b])));
    }
    let rows = if replicates.is_empty() {
        Vec::new()
    } else {
        truths
            .iter()
            .enumerate()
            .map(|(p, (name, truth))| {
                let means: Vec<f64> = replicates.iter().map(|r| r.summaries[p].mean).collect();
                let covered = replicates.iter().filter(|r| r.summaries[p].covers(*truth)).count();
                let estimate = mean(&means);
                StudyRow {
                    name: name.clone(),
                    truth: *truth,
                    estimate,
                    se: if means.len() > 1 { variance(&means).sqrt() } else { 0.0 },
                    bias: estimate - truth,
                    coverage: covered as f64 / replicates.len() as f64,
                }
            })
            .collect()
    };
    Ok(StudyReport { rows, replicates, failures })
}
