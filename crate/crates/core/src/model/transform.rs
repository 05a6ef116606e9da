//! Change of variables between unconstrained sampler coordinates and model parameters.
//!
//! | parameter            | map                                   |
//! |----------------------|---------------------------------------|
//! | `beta1_0`, `beta2_0` | identity                              |
//! | `beta3_0`            | `-exp(z)`                             |
//! | `omega_0`            | identity, or `L + exp(z)` when bounded |
//! | scales               | `exp(z)`                              |
//! | `u1`, `u2`           | `sigma * z` (non-centered) or identity |
//! | `u3`                 | `beta3_i = -exp(z)`, `u3 = beta3_i - beta3_0` |
//! | `u4`                 | as `u1` when unbounded; `omega_i = L + exp(z)` when bounded |

use thiserror::Error;

use super::params::{FixedEffects, ModelParameters, ParameterLayout, ScaleParameters, SubjectEffects};
use super::prior::{Parameterization, PriorConfig};
use crate::error::{BablrError, Result};

/// A coordinate overflowed its transform; the density is treated as zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("parameter transform produced a non-finite value")]
pub struct NonFiniteDensity;

#[derive(Debug, Clone, PartialEq)]
pub struct Constrained {
    pub params: ModelParameters,
    pub log_jacobian: f64,
}

/// How random effect `k` (0-based) is represented in sampler coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum EffectCoordinate {
    /// `u = sigma * z`.
    NonCentered,
    /// `u = z`.
    Centered,
    /// Subject value `-exp(z)`; used for the slope decrement.
    NegativeLog,
    /// Subject value `L + exp(z)`; used for bounded change points.
    LowerBoundedLog(f64),
}

impl PriorConfig {
    pub(crate) fn effect_coordinate(&self, k: usize) -> EffectCoordinate {
        let unbounded = match self.parameterization {
            Parameterization::NonCentered => EffectCoordinate::NonCentered,
            Parameterization::Centered => EffectCoordinate::Centered,
        };
        match (k, self.cp_lower_bound) {
            (2, _) => EffectCoordinate::NegativeLog,
            (3, Some(l)) => EffectCoordinate::LowerBoundedLog(l),
            _ => unbounded,
        }
    }
}

#[inline]
fn checked_exp(z: f64) -> std::result::Result<f64, NonFiniteDensity> {
    let v = z.exp();
    if v.is_finite() && z.is_finite() {
        Ok(v)
    } else {
        Err(NonFiniteDensity)
    }
}

/// Maps unconstrained coordinates to model parameters and returns the log
/// absolute Jacobian determinant of the map.
pub fn to_constrained(
    z: &[f64],
    n_subjects: usize,
    config: &PriorConfig,
) -> std::result::Result<Constrained, NonFiniteDensity> {
    assert_eq!(z.len(), ParameterLayout::dim_for(n_subjects), "coordinate vector length");
    if z.iter().any(|v| !v.is_finite()) {
        return Err(NonFiniteDensity);
    }
    let mut log_jacobian = 0.0;

    let beta3 = -checked_exp(z[ParameterLayout::BETA3_0])?;
    log_jacobian += z[ParameterLayout::BETA3_0];
    let omega = match config.cp_lower_bound {
        Some(l) => {
            log_jacobian += z[ParameterLayout::OMEGA_0];
            l + checked_exp(z[ParameterLayout::OMEGA_0])?
        }
        None => z[ParameterLayout::OMEGA_0],
    };
    let fixed = FixedEffects {
        beta1: z[ParameterLayout::BETA1_0],
        beta2: z[ParameterLayout::BETA2_0],
        beta3,
        omega,
    };

    let sigma_y = checked_exp(z[ParameterLayout::SIGMA_Y])?;
    log_jacobian += z[ParameterLayout::SIGMA_Y];
    let mut sigma_u = [0.0; 4];
    for (k, s) in sigma_u.iter_mut().enumerate() {
        let c = z[ParameterLayout::SIGMA_U[k]];
        *s = checked_exp(c)?;
        log_jacobian += c;
    }

    let mut effects = SubjectEffects::zeros(n_subjects);
    let fixed_values = [fixed.beta1, fixed.beta2, fixed.beta3, fixed.omega];
    for k in 0..4 {
        let start = ParameterLayout::N_POPULATION + k * n_subjects;
        let coords = &z[start..start + n_subjects];
        let out = effects.effect_mut(k);
        match config.effect_coordinate(k) {
            EffectCoordinate::NonCentered => {
                for (u, &c) in out.iter_mut().zip(coords) {
                    *u = sigma_u[k] * c;
                }
                log_jacobian += n_subjects as f64 * sigma_u[k].ln();
            }
            EffectCoordinate::Centered => out.copy_from_slice(coords),
            EffectCoordinate::NegativeLog => {
                for (u, &c) in out.iter_mut().zip(coords) {
                    *u = -checked_exp(c)? - fixed_values[k];
                    log_jacobian += c;
                }
            }
            EffectCoordinate::LowerBoundedLog(l) => {
                for (u, &c) in out.iter_mut().zip(coords) {
                    *u = l + checked_exp(c)? - fixed_values[k];
                    log_jacobian += c;
                }
            }
        }
    }

    Ok(Constrained {
        params: ModelParameters { fixed, scales: ScaleParameters { sigma_y, sigma_u }, effects },
        log_jacobian,
    })
}

/// Inverse of [`to_constrained`]. Fails when a parameter sits on or outside
/// the boundary of its support.
pub fn to_unconstrained(params: &ModelParameters, config: &PriorConfig) -> Result<Vec<f64>> {
    let out_of_support =
        |what: &str| BablrError::InvalidArgument(format!("{what} is outside the interior of its support"));
    let n = params.n_subjects();
    let mut z = vec![0.0; ParameterLayout::dim_for(n)];
    let fixed = &params.fixed;

    z[ParameterLayout::BETA1_0] = fixed.beta1;
    z[ParameterLayout::BETA2_0] = fixed.beta2;
    if !(fixed.beta3 < 0.0) {
        return Err(out_of_support("beta3_0"));
    }
    z[ParameterLayout::BETA3_0] = (-fixed.beta3).ln();
    z[ParameterLayout::OMEGA_0] = match config.cp_lower_bound {
        Some(l) if fixed.omega > l => (fixed.omega - l).ln(),
        Some(_) => return Err(out_of_support("omega_0")),
        None => fixed.omega,
    };
    if !params.scales.is_valid() {
        return Err(out_of_support("a scale parameter"));
    }
    z[ParameterLayout::SIGMA_Y] = params.scales.sigma_y.ln();
    for k in 0..4 {
        z[ParameterLayout::SIGMA_U[k]] = params.scales.sigma_u[k].ln();
    }

    let fixed_values = [fixed.beta1, fixed.beta2, fixed.beta3, fixed.omega];
    for k in 0..4 {
        let start = ParameterLayout::N_POPULATION + k * n;
        let sigma = params.scales.sigma_u[k];
        for (i, &u) in params.effects.effect(k).iter().enumerate() {
            z[start + i] = match config.effect_coordinate(k) {
                EffectCoordinate::NonCentered => u / sigma,
                EffectCoordinate::Centered => u,
                EffectCoordinate::NegativeLog => {
                    let value = fixed_values[k] + u;
                    if !(value < 0.0) {
                        return Err(out_of_support("a subject slope decrement"));
                    }
                    (-value).ln()
                }
                EffectCoordinate::LowerBoundedLog(l) => {
                    let value = fixed_values[k] + u;
                    if !(value > l) {
                        return Err(out_of_support("a subject change point"));
                    }
                    (value - l).ln()
                }
            };
        }
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(out_of_support("a parameter"));
    }
    Ok(z)
}
