//! Multi-chain orchestration and draw storage.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::adapt::{DualAveraging, MassAdaptation, WindowSchedule};
use super::nuts::{Nuts, TransitionStats};
use super::LogDensity;
use crate::error::{BablrError, Result};

/// Maximum number of initialization re-draws per chain.
const MAX_INIT_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup: usize,
    pub samples: usize,
    /// Target acceptance statistic for step-size adaptation.
    pub target_accept: f64,
    pub max_treedepth: usize,
    pub seed: u64,
    /// Half-width of the uniform initialization box on the unconstrained scale.
    pub init_radius: f64,
    /// Adapt step size and metric during warmup.
    pub adapt: bool,
    /// Step size used when adaptation is off, and the starting point of the search otherwise.
    pub initial_step_size: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            warmup: 5000,
            samples: 5000,
            target_accept: 0.8,
            max_treedepth: 10,
            seed: 0,
            init_radius: 2.0,
            adapt: true,
            initial_step_size: 1.0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(BablrError::InvalidSampler(m));
        if self.chains == 0 {
            return bad("chains must be at least 1".into());
        }
        if self.samples == 0 {
            return bad("samples must be at least 1".into());
        }
        if self.adapt && self.warmup < 150 {
            return bad(format!("warmup must be at least 150 when adapting, got {}", self.warmup));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return bad(format!("target_accept must lie in (0, 1), got {}", self.target_accept));
        }
        if !(self.init_radius >= 0.0 && self.init_radius.is_finite()) {
            return bad(format!("init_radius must be finite and nonnegative, got {}", self.init_radius));
        }
        if !(self.initial_step_size > 0.0 && self.initial_step_size.is_finite()) {
            return bad(format!("initial_step_size must be positive, got {}", self.initial_step_size));
        }
        Ok(())
    }
}

/// Post-warmup draws on the constrained scale with per-transition statistics.
///
/// Draws are stored chain-major: chain, then iteration, then parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawsStore {
    names: Vec<String>,
    n_chains: usize,
    n_iterations: usize,
    draws: Vec<f64>,
    stats: Vec<TransitionStats>,
    step_sizes: Vec<f64>,
    inv_mass: Vec<Vec<f64>>,
}

impl DrawsStore {
    /// Builds a store from raw draws without sampler statistics.
    pub fn from_draws(names: Vec<String>, n_chains: usize, n_iterations: usize, draws: Vec<f64>) -> Result<Self> {
        if n_chains == 0 || n_iterations == 0 {
            return Err(BablrError::InvalidArgument("draws need at least one chain and one iteration".into()));
        }
        if draws.len() != n_chains * n_iterations * names.len() {
            return Err(BablrError::InvalidArgument(format!(
                "expected {} values for {n_chains} chains x {n_iterations} iterations x {} parameters, got {}",
                n_chains * n_iterations * names.len(),
                names.len(),
                draws.len()
            )));
        }
        if draws.iter().any(|v| v.is_nan()) {
            return Err(BablrError::InvalidArgument("draws contain NaN".into()));
        }
        Ok(Self { names, n_chains, n_iterations, draws, stats: Vec::new(), step_sizes: Vec::new(), inv_mass: Vec::new() })
    }

    /// Attaches per-transition statistics, one per stored draw in chain-major order.
    pub fn with_stats(mut self, stats: Vec<TransitionStats>) -> Result<Self> {
        if stats.len() != self.n_draws() {
            return Err(BablrError::InvalidArgument(format!(
                "expected {} transition records, got {}",
                self.n_draws(),
                stats.len()
            )));
        }
        self.stats = stats;
        Ok(self)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_chains(&self) -> usize {
        self.n_chains
    }

    pub fn n_iterations(&self) -> usize {
        self.n_iterations
    }

    pub fn n_draws(&self) -> usize {
        self.n_chains * self.n_iterations
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn parameter_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// One draw as a parameter vector.
    pub fn draw(&self, chain: usize, iteration: usize) -> &[f64] {
        let d = self.dim();
        let start = (chain * self.n_iterations + iteration) * d;
        &self.draws[start..start + d]
    }

    /// All draws in chain-major order.
    pub fn iter_draws(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.draws.chunks_exact(self.dim().max(1))
    }

    /// Per-chain series for one parameter.
    pub fn chain_series(&self, param: usize) -> Vec<Vec<f64>> {
        (0..self.n_chains)
            .map(|c| (0..self.n_iterations).map(|i| self.draw(c, i)[param]).collect())
            .collect()
    }

    /// All draws of one parameter pooled across chains.
    pub fn pooled(&self, param: usize) -> Vec<f64> {
        self.iter_draws().map(|d| d[param]).collect()
    }

    pub fn has_stats(&self) -> bool {
        !self.stats.is_empty()
    }

    pub fn stats(&self, chain: usize, iteration: usize) -> Option<&TransitionStats> {
        self.stats.get(chain * self.n_iterations + iteration)
    }

    pub fn chain_stats(&self, chain: usize) -> &[TransitionStats] {
        if self.stats.is_empty() {
            return &[];
        }
        &self.stats[chain * self.n_iterations..(chain + 1) * self.n_iterations]
    }

    pub fn divergences(&self) -> usize {
        self.stats.iter().filter(|s| s.divergent).count()
    }

    /// Transitions that stopped at the depth limit.
    pub fn treedepth_hits(&self, max_treedepth: usize) -> usize {
        self.stats.iter().filter(|s| s.tree_depth >= max_treedepth).count()
    }

    pub fn mean_accept_per_chain(&self) -> Vec<f64> {
        (0..self.n_chains)
            .map(|c| {
                let s = self.chain_stats(c);
                if s.is_empty() {
                    f64::NAN
                } else {
                    s.iter().map(|t| t.accept_stat).sum::<f64>() / s.len() as f64
                }
            })
            .collect()
    }

    /// Adapted step size per chain (empty for stores loaded from disk).
    pub fn step_sizes(&self) -> &[f64] {
        &self.step_sizes
    }

    /// Adapted diagonal inverse metric per chain (empty for stores loaded from disk).
    pub fn inv_mass(&self) -> &[Vec<f64>] {
        &self.inv_mass
    }
}

struct ChainOutput {
    draws: Vec<f64>,
    stats: Vec<TransitionStats>,
    step_size: f64,
    inv_mass: Vec<f64>,
}

fn initialize<T: LogDensity + ?Sized>(target: &T, radius: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let dim = target.dim();
    let mut grad = vec![0.0; dim];
    for _ in 0..MAX_INIT_ATTEMPTS {
        let q: Vec<f64> = (0..dim)
            .map(|_| if radius > 0.0 { rng.random_range(-radius..radius) } else { 0.0 })
            .collect();
        let lp = target.log_density_grad(&q, &mut grad);
        if lp.is_finite() && grad.iter().all(|g| g.is_finite()) {
            return Ok(q);
        }
    }
    Err(BablrError::Initialization { attempts: MAX_INIT_ATTEMPTS })
}

fn run_chain<T: LogDensity + ?Sized>(target: &T, config: &SamplerConfig, chain: usize) -> Result<ChainOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(chain as u64);
    let dim = target.dim();
    let mut q = initialize(target, config.init_radius, &mut rng)?;
    let mut nuts = Nuts::new(target, config.initial_step_size, vec![1.0; dim], config.max_treedepth);

    if config.adapt {
        nuts.find_reasonable_step_size(&q, &mut rng)?;
        let mut da = DualAveraging::new(config.target_accept, nuts.step_size);
        let mut schedule = WindowSchedule::new(config.warmup);
        let mut mass = MassAdaptation::new(dim);
        for it in 0..config.warmup {
            let (next, stats) = nuts.transition(&q, &mut rng)?;
            q = next;
            nuts.step_size = da.update(stats.accept_stat);
            let (collect, close) = schedule.step();
            if collect {
                mass.add(&q);
            }
            if close {
                nuts.inv_mass = mass.estimate();
                mass.reset();
                nuts.find_reasonable_step_size(&q, &mut rng)?;
                da.restart(nuts.step_size);
            }
            if (it + 1) % 500 == 0 {
                log::debug!("chain {chain}: warmup {}/{} step size {:.3e}", it + 1, config.warmup, nuts.step_size);
            }
        }
        nuts.step_size = da.final_step_size();
    } else {
        for _ in 0..config.warmup {
            q = nuts.transition(&q, &mut rng)?.0;
        }
    }

    let mut draws = vec![0.0; config.samples * dim];
    let mut stats = Vec::with_capacity(config.samples);
    for out in draws.chunks_exact_mut(dim.max(1)).take(config.samples) {
        let (next, s) = nuts.transition(&q, &mut rng)?;
        q = next;
        target.write_constrained(&q, out);
        stats.push(s);
    }
    log::debug!("chain {chain}: done, {} divergences", stats.iter().filter(|s| s.divergent).count());
    Ok(ChainOutput { draws, stats, step_size: nuts.step_size, inv_mass: nuts.inv_mass })
}

/// Runs independent chains in parallel and merges them in chain order.
///
/// Chain `c` draws from the ChaCha8 stream `c` of `seed`, so results do not
/// depend on thread scheduling.
pub fn run_chains<T: LogDensity + ?Sized>(target: &T, config: &SamplerConfig) -> Result<DrawsStore> {
    config.validate()?;
    let outputs: Vec<ChainOutput> = (0..config.chains)
        .into_par_iter()
        .map(|c| run_chain(target, config, c))
        .collect::<Result<_>>()?;
    let mut store = DrawsStore::from_draws(
        target.parameter_names(),
        config.chains,
        config.samples,
        outputs.iter().flat_map(|o| o.draws.iter().copied()).collect(),
    )?;
    for o in outputs {
        store.stats.extend(o.stats);
        store.step_sizes.push(o.step_size);
        store.inv_mass.push(o.inv_mass);
    }
    Ok(store)
}
