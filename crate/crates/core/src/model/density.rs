//! Likelihood, prior and the log posterior with its analytic gradient.

use std::sync::Arc;

use super::params::{ModelParameters, ParameterLayout};
use super::prior::PriorConfig;
use super::transform::{to_constrained, EffectCoordinate};
use crate::data::LongitudinalDataset;
use crate::sampler::LogDensity;
use crate::stats::{inverse_mills_ratio, normal_ln_pdf, std_normal_ln_cdf, std_normal_ln_pdf, LN_SQRT_2PI};

/// Sum of all prior log densities on the constrained scale; `-inf` outside the support.
///
/// The slope decrements (and, with a lower bound, the change points) use normal
/// priors truncated to their support, including the normalizing constants.
pub fn log_prior(params: &ModelParameters, config: &PriorConfig) -> f64 {
    let f = &params.fixed;
    let s = &params.scales;
    if f.beta3 > 0.0 || !s.is_valid() {
        return f64::NEG_INFINITY;
    }
    let mut lp = config.beta1_0.ln_pdf(f.beta1) + config.beta2_0.ln_pdf(f.beta2);
    lp += config.beta3_0.ln_pdf(f.beta3) - config.beta3_0.ln_cdf(0.0);
    lp += config.omega_0.ln_pdf(f.omega);
    if let Some(l) = config.cp_lower_bound {
        if f.omega < l {
            return f64::NEG_INFINITY;
        }
        lp -= config.omega_0.ln_sf(l);
    }
    lp += config.sigma_y.ln_pdf(s.sigma_y);
    for k in 0..4 {
        lp += config.sigma_u[k].ln_pdf(s.sigma_u[k]);
    }

    let trunc3 = std_normal_ln_cdf(-f.beta3 / s.sigma_u[2]);
    let trunc4 = config.cp_lower_bound.map(|l| std_normal_ln_cdf((f.omega - l) / s.sigma_u[3]));
    for i in 0..params.n_subjects() {
        let e = &params.effects;
        lp += normal_ln_pdf(e.u1[i], 0.0, s.sigma_u[0]);
        lp += normal_ln_pdf(e.u2[i], 0.0, s.sigma_u[1]);
        if f.beta3 + e.u3[i] > 0.0 {
            return f64::NEG_INFINITY;
        }
        lp += normal_ln_pdf(e.u3[i], 0.0, s.sigma_u[2]) - trunc3;
        lp += normal_ln_pdf(e.u4[i], 0.0, s.sigma_u[3]);
        if let (Some(l), Some(t)) = (config.cp_lower_bound, trunc4) {
            if f.omega + e.u4[i] < l {
                return f64::NEG_INFINITY;
            }
            lp -= t;
        }
    }
    lp
}

/// Gaussian log likelihood of all observations given the subject bent lines.
pub fn log_likelihood(params: &ModelParameters, data: &LongitudinalDataset) -> f64 {
    let sigma = params.scales.sigma_y;
    let mut ll = 0.0;
    for (i, subject) in data.subjects().iter().enumerate() {
        let sp = params.subject(i);
        for (&t, &y) in subject.times.iter().zip(&subject.outcomes) {
            ll += normal_ln_pdf(y, sp.mean_at(t), sigma);
        }
    }
    ll
}

/// Log posterior density over unconstrained coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LogPosterior {
    pub value: f64,
    pub gradient: Vec<f64>,
    /// False when the point was rejected (overflow or support violation);
    /// `value` is then `-inf` and `gradient` is zero.
    pub finite: bool,
}

/// Log posterior (likelihood + prior + log Jacobian) and its gradient with
/// respect to the unconstrained coordinates.
pub fn log_posterior_grad(z: &[f64], data: &LongitudinalDataset, config: &PriorConfig) -> LogPosterior {
    let mut gradient = vec![0.0; z.len()];
    let value = log_posterior_grad_into(z, data, config, &mut gradient);
    let finite = value.is_finite();
    if !finite {
        gradient.iter_mut().for_each(|g| *g = 0.0);
    }
    LogPosterior { value: if finite { value } else { f64::NEG_INFINITY }, gradient, finite }
}

/// Allocation-free core of [`log_posterior_grad`]. Returns `-inf` on rejection,
/// in which case `grad` holds no meaningful values.
pub(crate) fn log_posterior_grad_into(
    z: &[f64],
    data: &LongitudinalDataset,
    config: &PriorConfig,
    grad: &mut [f64],
) -> f64 {
    use ParameterLayout as L;
    let n = data.n_subjects();
    debug_assert_eq!(z.len(), L::dim_for(n));
    debug_assert_eq!(grad.len(), z.len());
    grad.iter_mut().for_each(|g| *g = 0.0);
    if z.iter().any(|v| !v.is_finite()) {
        return f64::NEG_INFINITY;
    }

    let b1 = z[L::BETA1_0];
    let b2 = z[L::BETA2_0];
    let b3 = -z[L::BETA3_0].exp();
    let (w0, dw0) = match config.cp_lower_bound {
        Some(l) => {
            let e = z[L::OMEGA_0].exp();
            (l + e, e)
        }
        None => (z[L::OMEGA_0], 1.0),
    };
    let sy = z[L::SIGMA_Y].exp();
    let su = [
        z[L::SIGMA_U[0]].exp(),
        z[L::SIGMA_U[1]].exp(),
        z[L::SIGMA_U[2]].exp(),
        z[L::SIGMA_U[3]].exp(),
    ];
    if !(b3.is_finite() && w0.is_finite() && sy.is_finite() && su.iter().all(|s| s.is_finite()))
        || b3 == 0.0
        || sy == 0.0
        || su.contains(&0.0)
    {
        return f64::NEG_INFINITY;
    }

    // Fixed-effect priors and their Jacobians.
    let mut lp = config.beta1_0.ln_pdf(b1) + config.beta2_0.ln_pdf(b2);
    grad[L::BETA1_0] += config.beta1_0.d_ln_pdf(b1);
    grad[L::BETA2_0] += config.beta2_0.d_ln_pdf(b2);

    lp += config.beta3_0.ln_pdf(b3) - config.beta3_0.ln_cdf(0.0) + z[L::BETA3_0];
    grad[L::BETA3_0] += config.beta3_0.d_ln_pdf(b3) * b3 + 1.0;

    lp += config.omega_0.ln_pdf(w0);
    // d(lp)/d(omega_0), completed with subject terms before the chain rule.
    let mut d_w0 = config.omega_0.d_ln_pdf(w0);
    if let Some(l) = config.cp_lower_bound {
        lp += -config.omega_0.ln_sf(l) + z[L::OMEGA_0];
        grad[L::OMEGA_0] += 1.0;
    }

    // Scale priors, with d/dsigma accumulated for the chain rule through exp.
    let (lpy, dy) = config.sigma_y.ln_pdf_and_deriv(sy);
    lp += lpy + z[L::SIGMA_Y];
    let mut d_sy = dy;
    grad[L::SIGMA_Y] += 1.0;
    let mut d_su = [0.0; 4];
    for k in 0..4 {
        let (lpk, dk) = config.sigma_u[k].ln_pdf_and_deriv(su[k]);
        lp += lpk + z[L::SIGMA_U[k]];
        d_su[k] = dk;
        grad[L::SIGMA_U[k]] += 1.0;
    }
    if !lp.is_finite() {
        return f64::NEG_INFINITY;
    }

    // Truncation constants for the slope decrement (and bounded change points).
    let a3 = -b3 / su[2];
    let trunc3 = std_normal_ln_cdf(a3);
    let mills3 = inverse_mills_ratio(a3);
    let mut d_b3 = 0.0;
    let bound = config.cp_lower_bound;
    let (trunc4, mills4, c4) = match bound {
        Some(l) => {
            let c = (w0 - l) / su[3];
            (std_normal_ln_cdf(c), inverse_mills_ratio(c), c)
        }
        None => (0.0, 0.0, 0.0),
    };

    let mut sum_sq = 0.0;
    let n_obs = data.n_observations() as f64;
    let fixed_values = [b1, b2, b3, w0];
    let coords = [
        config.effect_coordinate(0),
        config.effect_coordinate(1),
        config.effect_coordinate(2),
        config.effect_coordinate(3),
    ];

    for (i, subject) in data.subjects().iter().enumerate() {
        // Subject values, plus d(value)/d(own coordinate) for the chain rule.
        let mut value = [0.0; 4];
        let mut dvalue = [0.0; 4];
        for k in 0..4 {
            let idx = L::N_POPULATION + k * n + i;
            let c = z[idx];
            match coords[k] {
                EffectCoordinate::NonCentered => {
                    let u = su[k] * c;
                    value[k] = fixed_values[k] + u;
                    dvalue[k] = su[k];
                    lp += std_normal_ln_pdf(c);
                    grad[idx] -= c;
                }
                EffectCoordinate::Centered => {
                    value[k] = fixed_values[k] + c;
                    dvalue[k] = 1.0;
                    let r = c / su[k];
                    lp += -0.5 * r * r - su[k].ln() - LN_SQRT_2PI;
                    grad[idx] -= c / (su[k] * su[k]);
                    d_su[k] += (-1.0 + r * r) / su[k];
                }
                EffectCoordinate::NegativeLog => {
                    let v = -c.exp();
                    value[k] = v;
                    dvalue[k] = v;
                    let d = v - b3;
                    let r = d / su[2];
                    lp += -0.5 * r * r - su[2].ln() - LN_SQRT_2PI - trunc3 + c;
                    grad[idx] += -d / (su[2] * su[2]) * v + 1.0;
                    d_b3 += d / (su[2] * su[2]) + mills3 / su[2];
                    d_su[2] += (-1.0 + r * r) / su[2] - mills3 * b3 / (su[2] * su[2]);
                }
                EffectCoordinate::LowerBoundedLog(l) => {
                    let e = c.exp();
                    let v = l + e;
                    value[k] = v;
                    dvalue[k] = e;
                    let d = v - w0;
                    let r = d / su[3];
                    lp += -0.5 * r * r - su[3].ln() - LN_SQRT_2PI - trunc4 + c;
                    grad[idx] += -d / (su[3] * su[3]) * e + 1.0;
                    d_w0 += d / (su[3] * su[3]) - mills4 / su[3];
                    d_su[3] += (-1.0 + r * r) / su[3] + mills4 * c4 / su[3];
                }
            }
        }
        if !value.iter().all(|v| v.is_finite()) {
            return f64::NEG_INFINITY;
        }
        let [beta1, beta2, beta3, omega] = value;

        // Likelihood contributions for this subject.
        let mut g = [0.0; 4];
        let inv_var = 1.0 / (sy * sy);
        for (&t, &y) in subject.times.iter().zip(&subject.outcomes) {
            let dt = t - omega;
            let post = t > omega;
            let slope = if post { beta2 + beta3 } else { beta2 };
            let resid = y - (beta1 + slope * dt);
            sum_sq += resid * resid;
            let w = resid * inv_var;
            g[0] += w;
            g[1] += w * dt;
            if post {
                g[2] += w * dt;
            }
            g[3] -= w * slope;
        }

        // Chain rule from subject values to coordinates.
        for k in 0..4 {
            let idx = L::N_POPULATION + k * n + i;
            grad[idx] += g[k] * dvalue[k];
            match coords[k] {
                EffectCoordinate::NonCentered => {
                    // value = fixed + sigma * c
                    add_fixed(grad, k, g[k], &mut d_w0);
                    d_su[k] += g[k] * z[idx];
                }
                EffectCoordinate::Centered => add_fixed(grad, k, g[k], &mut d_w0),
                EffectCoordinate::NegativeLog | EffectCoordinate::LowerBoundedLog(_) => {}
            }
        }
    }

    lp += -n_obs * (sy.ln() + LN_SQRT_2PI) - 0.5 * sum_sq / (sy * sy);
    d_sy += -n_obs / sy + sum_sq / (sy * sy * sy);

    grad[L::BETA3_0] += d_b3 * b3;
    grad[L::OMEGA_0] += d_w0 * dw0;
    grad[L::SIGMA_Y] += d_sy * sy;
    for k in 0..4 {
        grad[L::SIGMA_U[k]] += d_su[k] * su[k];
    }

    if lp.is_finite() && grad.iter().all(|g| g.is_finite()) {
        lp
    } else {
        f64::NEG_INFINITY
    }
}

/// Routes a likelihood derivative with respect to a subject value onto the
/// matching fixed effect (which enters additively).
#[inline]
fn add_fixed(grad: &mut [f64], k: usize, g: f64, d_w0: &mut f64) {
    match k {
        0 => grad[ParameterLayout::BETA1_0] += g,
        1 => grad[ParameterLayout::BETA2_0] += g,
        // omega_0 may itself be transformed; its chain rule is applied once at the end.
        3 => *d_w0 += g,
        _ => unreachable!("the slope decrement is never additive in sampler coordinates"),
    }
}

/// The posterior of one dataset as a sampler target.
#[derive(Debug, Clone)]
pub struct BablrTarget {
    data: Arc<LongitudinalDataset>,
    config: PriorConfig,
    layout: ParameterLayout,
}

impl BablrTarget {
    pub fn new(data: Arc<LongitudinalDataset>, config: PriorConfig) -> crate::Result<Self> {
        config.validate()?;
        let layout = ParameterLayout::new(data.subject_ids());
        Ok(Self { data, config, layout })
    }

    pub fn data(&self) -> &LongitudinalDataset {
        &self.data
    }

    pub fn config(&self) -> &PriorConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParameterLayout {
        &self.layout
    }
}

impl LogDensity for BablrTarget {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn log_density_grad(&self, position: &[f64], grad: &mut [f64]) -> f64 {
        log_posterior_grad_into(position, &self.data, &self.config, grad)
    }

    fn write_constrained(&self, position: &[f64], out: &mut [f64]) {
        match to_constrained(position, self.layout.n_subjects(), &self.config) {
            Ok(c) => c.params.write_flat(out),
            Err(_) => out.iter_mut().for_each(|v| *v = f64::NAN),
        }
    }

    fn parameter_names(&self) -> Vec<String> {
        self.layout.names()
    }
}

/// Branch indicator (`t > omega_i`) for every observation, or `None` off the support.
fn branch_pattern(z: &[f64], data: &LongitudinalDataset, config: &PriorConfig) -> Option<Vec<bool>> {
    let p = to_constrained(z, data.n_subjects(), config).ok()?.params;
    Some(
        data.subjects()
            .iter()
            .enumerate()
            .flat_map(|(i, s)| {
                let omega = p.subject(i).omega;
                s.times.iter().map(move |&t| t > omega)
            })
            .collect(),
    )
}

/// Richardson-extrapolated central differences of the log posterior with step
/// `rel_step * max(1, |z_k|)`.
///
/// A coordinate is `None` when its stencil moves some change point across an
/// observation time (the density is not differentiable there) or leaves the support.
pub fn finite_difference_gradient(
    z: &[f64],
    data: &LongitudinalDataset,
    config: &PriorConfig,
    rel_step: f64,
) -> Vec<Option<f64>> {
    let base = branch_pattern(z, data, config);
    let mut work = z.to_vec();
    (0..z.len())
        .map(|k| {
            let h = rel_step * z[k].abs().max(1.0);
            let mut eval = |delta: f64| -> Option<f64> {
                work[k] = z[k] + delta;
                let same = branch_pattern(&work, data, config) == base;
                let v = log_posterior_grad(&work, data, config).value;
                work[k] = z[k];
                (same && v.is_finite()).then_some(v)
            };
            let d1 = (eval(h)? - eval(-h)?) / (2.0 * h);
            let d2 = (eval(0.5 * h)? - eval(-0.5 * h)?) / h;
            Some((4.0 * d2 - d1) / 3.0)
        })
        .collect()
}
