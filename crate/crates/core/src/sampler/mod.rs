//! No-U-Turn Hamiltonian Monte Carlo with warmup adaptation and multi-chain runs.

mod adapt;
mod chains;
mod nuts;

pub use adapt::{adapt_mass, DualAveraging, MassAdaptation, WindowSchedule};
pub use chains::{run_chains, DrawsStore, SamplerConfig};
pub use nuts::{nuts_transition, Nuts, TransitionStats, DIVERGENCE_THRESHOLD};

/// A differentiable log density over `R^dim`.
///
/// Implementations return `-inf` (or any non-finite value) to reject a point;
/// the sampler never treats that as an error past initialization.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Log density at `position`, writing the gradient into `grad`.
    fn log_density_grad(&self, position: &[f64], grad: &mut [f64]) -> f64;

    /// Maps a sampler position to the values stored as draws.
    fn write_constrained(&self, position: &[f64], out: &mut [f64]) {
        out.copy_from_slice(position);
    }

    fn parameter_names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("x[{i}]")).collect()
    }
}
