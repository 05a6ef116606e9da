//! The prior, carried to the unconstrained scale with its Jacobian, integrates to one.

mod support;

use bablr::model::{PriorConfig, ScaleFamily, ScalePrior};
use support::normalization::total_mass;

const FAMILIES: [ScaleFamily; 4] = [
    ScaleFamily::HalfCauchy,
    ScaleFamily::HalfNormal,
    ScaleFamily::LogNormal,
    ScaleFamily::HalfStudentT { df: 3.0 },
];

/// Every scale prior switched to `family`. Lognormal priors get unit log-scale,
/// since reading a half-Cauchy scale of 10 as a log-scale SD puts mass on
/// scales near `exp(-40)`, below what the quadrature can resolve.
fn with_family(base: PriorConfig, family: ScaleFamily) -> PriorConfig {
    let mut cfg = base.with_scale_family(family);
    if family == ScaleFamily::LogNormal {
        cfg.sigma_y = ScalePrior::lognormal(0.0, 1.0);
        cfg.sigma_u = [ScalePrior::lognormal(0.0, 1.0); 4];
    }
    cfg
}

fn check(config: &PriorConfig, label: &str) {
    let m = total_mass(config);
    assert!((m - 1.0).abs() < 1e-6, "{label}: total mass {m}");
}

#[test]
fn unbounded_prior_mass_is_one_for_every_scale_family() {
    for f in FAMILIES {
        check(&with_family(PriorConfig::simulation(), f), &format!("{f:?}"));
    }
}

#[test]
fn bounded_prior_mass_is_one_for_every_scale_family() {
    for f in FAMILIES {
        check(&with_family(PriorConfig::application(), f), &format!("{f:?}"));
    }
}

#[test]
fn application_preset_mass_is_one() {
    check(&PriorConfig::application(), "application");
}

/// One scale prior pushed through `x = exp(z)`, by the trapezoid rule on a wide window.
fn log_scale_mass(p: ScalePrior) -> f64 {
    let h = 0.01;
    (0..=12_000).map(|k| -60.0 + k as f64 * h).map(|z| (p.ln_pdf(z.exp()) + z).exp() * h).sum()
}

#[test]
fn single_scale_priors_integrate_to_one_on_the_log_scale() {
    for p in [
        ScalePrior::half_cauchy(0.0, 1.0),
        ScalePrior::half_normal(0.0, 5.0),
        ScalePrior::lognormal(0.0, 0.2),
        ScalePrior::half_student_t(3.0, 0.0, 2.0),
        ScalePrior::half_cauchy(1.0, 2.0),
        ScalePrior::half_normal(-1.0, 3.0),
    ] {
        let m = log_scale_mass(p);
        assert!((m - 1.0).abs() < 1e-6, "{p}: mass {m}");
    }
}
