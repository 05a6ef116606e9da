//! Total prior mass on the unconstrained scale for a one-subject model.
//!
//! The unconstrained log density `log_prior(T(z)) + log|J(z)|` factors into
//! one-dimensional terms plus blocks for the truncated effects (`beta3_0`,
//! `sigma_u3`, `u3`) and, with a lower bound, (`omega_0`, `sigma_u4`, `u4`).
//! Each factor is integrated by moving only its coordinates away from a base
//! point, so the product of the integrals times the density at the base point
//! is the total mass, which must be one when every normalizing constant and
//! Jacobian term is right.

use bablr::model::{log_prior, to_constrained, ParameterLayout, PriorConfig, ScaleFamily, ScalePrior};

const OUTER_STEP: f64 = 0.25;

fn log_density(z: &[f64], config: &PriorConfig) -> f64 {
    match to_constrained(z, 1, config) {
        Ok(c) => log_prior(&c.params, config) + c.log_jacobian,
        Err(_) => f64::NEG_INFINITY,
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Log of the trapezoid sum of `exp(f)`; spectrally accurate for smooth,
/// rapidly decaying integrands on a wide enough window.
fn log_trapezoid(lo: f64, hi: f64, h: f64, f: impl Fn(f64) -> f64) -> f64 {
    let n = ((hi - lo) / h).ceil() as usize;
    let h = (hi - lo) / n as f64;
    let vals: Vec<f64> = (0..=n)
        .map(|j| {
            let w = if j == 0 || j == n { 0.5f64.ln() } else { 0.0 };
            f(lo + j as f64 * h) + w
        })
        .collect();
    log_sum_exp(&vals) + h.ln()
}

/// Log of `int exp(f)` by double-exponential quadrature over segments split at
/// `breaks`, where narrow peaks may sit.
fn log_tanh_sinh(lo: f64, hi: f64, breaks: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    let mut pts = vec![lo, hi];
    pts.extend(breaks.iter().copied().filter(|b| *b > lo && *b < hi));
    pts.sort_by(f64::total_cmp);
    let shift = pts.iter().map(|&p| f(p)).fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = pts
        .windows(2)
        .map(|w| quadrature::double_exponential::integrate(|t| (f(t) - shift).exp(), w[0], w[1], 1e-13).integral)
        .sum();
    shift + total.ln()
}

/// Window and step for a log-scale coordinate under a zero-location scale prior.
fn scale_window(p: &ScalePrior) -> (f64, f64, f64) {
    assert_eq!(p.location, 0.0, "windows assume zero-location scale priors");
    let ls = p.scale.ln();
    match p.family {
        ScaleFamily::HalfCauchy => (ls - 18.0, ls + 18.0, OUTER_STEP),
        ScaleFamily::HalfStudentT { df } => (ls - 18.0, ls + 20.0 / df + 2.0, OUTER_STEP),
        ScaleFamily::HalfNormal => (ls - 18.0, ls + 14f64.ln(), OUTER_STEP),
        ScaleFamily::LogNormal => (-13.0 * p.scale, 13.0 * p.scale, (0.5 * p.scale).min(OUTER_STEP)),
    }
}

/// Total unconstrained prior mass for one subject under the non-centered parameterization.
pub fn total_mass(config: &PriorConfig) -> f64 {
    let layout = ParameterLayout::new(vec!["s".to_string()]);
    let u = |k: usize| layout.effect_index(k, 0);
    let mut z0 = vec![0.0; ParameterLayout::dim_for(1)];
    z0[ParameterLayout::OMEGA_0] = match config.cp_lower_bound {
        None => config.omega_0.location,
        Some(l) => (config.omega_0.location - l).max(1.0).ln(),
    };
    let base = log_density(&z0, config);
    assert!(base.is_finite(), "base point has zero density");
    let along = |coords: &[(usize, f64)]| {
        let mut z = z0.clone();
        for &(k, v) in coords {
            z[k] = v;
        }
        log_density(&z, config) - base
    };

    let mut log_mass = base;
    let normal = |p: &bablr::model::NormalPrior| (p.location - 14.0 * p.scale, p.location + 14.0 * p.scale, p.scale / 4.0);
    let mut one_d: Vec<(usize, (f64, f64, f64))> = vec![
        (ParameterLayout::BETA1_0, normal(&config.beta1_0)),
        (ParameterLayout::BETA2_0, normal(&config.beta2_0)),
        (ParameterLayout::SIGMA_Y, scale_window(&config.sigma_y)),
        (ParameterLayout::SIGMA_U[0], scale_window(&config.sigma_u[0])),
        (ParameterLayout::SIGMA_U[1], scale_window(&config.sigma_u[1])),
        (u(0), (-14.0, 14.0, 0.25)),
        (u(1), (-14.0, 14.0, 0.25)),
    ];
    if config.cp_lower_bound.is_none() {
        one_d.push((ParameterLayout::OMEGA_0, normal(&config.omega_0)));
        one_d.push((ParameterLayout::SIGMA_U[3], scale_window(&config.sigma_u[3])));
        one_d.push((u(3), (-14.0, 14.0, 0.25)));
    }
    for (k, (lo, hi, h)) in one_d {
        log_mass += log_trapezoid(lo, hi, h / 4.0, |v| along(&[(k, v)]));
    }

    // Truncated block: the parent coordinate `a` carries the subject value's
    // location as `exp(a)` away from the boundary, so a narrow peak of the
    // effect coordinate sits at `t = a` when its SD is small.
    let block = |parent: usize, (plo, phi): (f64, f64), sd: usize, effect: usize| {
        let (slo, shi, sh) = scale_window(&config.sigma_u[sd]);
        let sd_idx = ParameterLayout::SIGMA_U[sd];
        log_trapezoid(plo, phi, 0.2f64.min(sh), |a| {
            log_trapezoid(slo, shi, sh, |b| {
                let hi = (a.exp() + 14.0 * b.exp()).ln();
                let lo = a.min(b) - 36.0;
                log_tanh_sinh(lo, hi, &[a, b], |t| along(&[(parent, a), (sd_idx, b), (effect, t)]))
            })
        })
    };
    let b3 = config.beta3_0.scale.ln();
    log_mass += block(ParameterLayout::BETA3_0, (b3 - 18.0, b3 + 14f64.ln()), 2, u(2));
    if let Some(l) = config.cp_lower_bound {
        let o = &config.omega_0;
        let hi = (o.location - l + 14.0 * o.scale).max(o.scale).ln();
        log_mass += block(ParameterLayout::OMEGA_0, (o.scale.ln() - 18.0, hi), 3, u(3));
    }
    log_mass.exp()
}
