//! The bent-line random change-point model.

mod density;
mod params;
mod prior;
mod transform;

pub use density::{finite_difference_gradient, log_likelihood, log_posterior_grad, log_prior, BablrTarget, LogPosterior};
pub use params::{
    FixedEffects, ModelParameters, ParameterLayout, ScaleParameters, SubjectEffects, SubjectParams,
};
pub use prior::{NormalPrior, Parameterization, PriorConfig, ScaleFamily, ScalePrior};
pub use transform::{to_constrained, to_unconstrained, Constrained, NonFiniteDensity};

/// Mean outcome of a bent line at time `t`.
///
/// Slope `beta2` applies up to and including the change point `omega`;
/// `beta2 + beta3` applies after it. The line passes through `(omega, beta1)`.
#[inline]
pub fn bent_line_mean(beta1: f64, beta2: f64, beta3: f64, omega: f64, t: f64) -> f64 {
    let dt = t - omega;
    if t <= omega {
        beta1 + beta2 * dt
    } else {
        beta1 + (beta2 + beta3) * dt
    }
}
