//! Prior families and the full prior configuration.

use std::fmt;
use std::str::FromStr;

use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::gamma::ln_gamma;

use crate::error::{BablrError, Result};
use crate::stats::{normal_ln_pdf, std_normal_ln_cdf, LN_SQRT_2PI};

/// `normal(location, scale)`. Also used for the slope decrement, where it is
/// read as a normal truncated to `(-inf, 0]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalPrior {
    pub location: f64,
    pub scale: f64,
}

impl NormalPrior {
    pub const fn new(location: f64, scale: f64) -> Self {
        Self { location, scale }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        normal_ln_pdf(x, self.location, self.scale)
    }

    /// d/dx of [`ln_pdf`](Self::ln_pdf).
    pub fn d_ln_pdf(&self, x: f64) -> f64 {
        -(x - self.location) / (self.scale * self.scale)
    }

    /// `ln P(X <= upper)`.
    pub fn ln_cdf(&self, upper: f64) -> f64 {
        std_normal_ln_cdf((upper - self.location) / self.scale)
    }

    /// `ln P(X >= lower)`.
    pub fn ln_sf(&self, lower: f64) -> f64 {
        std_normal_ln_cdf((self.location - lower) / self.scale)
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !self.location.is_finite() || !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(BablrError::InvalidPrior(format!(
                "{name}: need finite location and positive scale, got ({}, {})",
                self.location, self.scale
            )));
        }
        Ok(())
    }
}

impl fmt::Display for NormalPrior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "normal({},{})", self.location, self.scale)
    }
}

impl FromStr for NormalPrior {
    type Err = BablrError;

    fn from_str(s: &str) -> Result<Self> {
        let (family, args) = split_call(s)?;
        match family.as_str() {
            "normal" | "half_normal" if args.len() == 2 => Ok(Self::new(args[0], args[1])),
            _ => Err(BablrError::InvalidPrior(format!("expected normal(location,scale), got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScaleFamily {
    HalfCauchy,
    HalfNormal,
    LogNormal,
    HalfStudentT { df: f64 },
}

/// Prior on a strictly positive scale parameter.
///
/// Half families are the location-scale density truncated to `[0, inf)` and
/// renormalized; `LogNormal` is parameterized on the log scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalePrior {
    pub family: ScaleFamily,
    pub location: f64,
    pub scale: f64,
}

impl ScalePrior {
    pub const fn half_cauchy(location: f64, scale: f64) -> Self {
        Self { family: ScaleFamily::HalfCauchy, location, scale }
    }

    pub const fn half_normal(location: f64, scale: f64) -> Self {
        Self { family: ScaleFamily::HalfNormal, location, scale }
    }

    pub const fn lognormal(location: f64, scale: f64) -> Self {
        Self { family: ScaleFamily::LogNormal, location, scale }
    }

    pub const fn half_student_t(df: f64, location: f64, scale: f64) -> Self {
        Self { family: ScaleFamily::HalfStudentT { df }, location, scale }
    }

    /// Same location and scale under another family.
    pub fn with_family(self, family: ScaleFamily) -> Self {
        Self { family, ..self }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        self.ln_pdf_and_deriv(x).0
    }

    /// Log density and its derivative with respect to `x`.
    /// Returns `(-inf, 0)` outside the support.
    pub fn ln_pdf_and_deriv(&self, x: f64) -> (f64, f64) {
        if !(x > 0.0) || !x.is_finite() {
            return (f64::NEG_INFINITY, 0.0);
        }
        let (mu, s) = (self.location, self.scale);
        match self.family {
            ScaleFamily::HalfCauchy => {
                let z = (x - mu) / s;
                let norm = 0.5 + (mu / s).atan() / std::f64::consts::PI;
                let lp = -(std::f64::consts::PI * s).ln() - (z * z).ln_1p() - norm.ln();
                (lp, -2.0 * z / (s * (1.0 + z * z)))
            }
            ScaleFamily::HalfNormal => {
                let z = (x - mu) / s;
                let lp = -0.5 * z * z - s.ln() - LN_SQRT_2PI - std_normal_ln_cdf(mu / s);
                (lp, -z / s)
            }
            ScaleFamily::LogNormal => {
                let lx = x.ln();
                let z = (lx - mu) / s;
                let lp = -lx - s.ln() - LN_SQRT_2PI - 0.5 * z * z;
                (lp, -(1.0 + z / s) / x)
            }
            ScaleFamily::HalfStudentT { df } => {
                let d = x - mu;
                let z = d / s;
                let tail = if mu == 0.0 {
                    -std::f64::consts::LN_2
                } else {
                    StudentsT::new(0.0, 1.0, df)
                        .map(|t| t.sf(-mu / s).ln())
                        .unwrap_or(f64::NAN)
                };
                let lp = ln_gamma(0.5 * (df + 1.0))
                    - ln_gamma(0.5 * df)
                    - 0.5 * (df * std::f64::consts::PI).ln()
                    - s.ln()
                    - 0.5 * (df + 1.0) * (z * z / df).ln_1p()
                    - tail;
                (lp, -(df + 1.0) * d / (df * s * s + d * d))
            }
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !self.location.is_finite() || !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(BablrError::InvalidPrior(format!(
                "{name}: need finite location and positive scale, got ({}, {})",
                self.location, self.scale
            )));
        }
        if let ScaleFamily::HalfStudentT { df } = self.family {
            if !(df > 0.0 && df.is_finite()) {
                return Err(BablrError::InvalidPrior(format!("{name}: degrees of freedom must be positive")));
            }
        }
        Ok(())
    }
}

impl fmt::Display for ScalePrior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            ScaleFamily::HalfCauchy => write!(f, "half_cauchy({},{})", self.location, self.scale),
            ScaleFamily::HalfNormal => write!(f, "half_normal({},{})", self.location, self.scale),
            ScaleFamily::LogNormal => write!(f, "lognormal({},{})", self.location, self.scale),
            ScaleFamily::HalfStudentT { df } => {
                write!(f, "half_t({},{},{})", df, self.location, self.scale)
            }
        }
    }
}

impl FromStr for ScalePrior {
    type Err = BablrError;

    /// Parses `half_cauchy(0,10)`, `half-normal(0,5)`, `lognormal(0,0.2)` or
    /// `half_t(df,location,scale)`.
    fn from_str(s: &str) -> Result<Self> {
        let (family, a) = split_call(s)?;
        let prior = match (family.as_str(), a.len()) {
            ("half_cauchy", 2) => Self::half_cauchy(a[0], a[1]),
            ("half_normal", 2) => Self::half_normal(a[0], a[1]),
            ("lognormal", 2) => Self::lognormal(a[0], a[1]),
            ("half_t" | "half_student_t", 3) => Self::half_student_t(a[0], a[1], a[2]),
            _ => {
                return Err(BablrError::InvalidPrior(format!(
                    "unrecognized scale prior `{s}` (expected half_cauchy, half_normal, lognormal or half_t)"
                )))
            }
        };
        prior.validate(s)?;
        Ok(prior)
    }
}

fn split_call(s: &str) -> Result<(String, Vec<f64>)> {
    let bad = || BablrError::InvalidPrior(format!("cannot parse prior `{s}`"));
    let s = s.trim();
    let open = s.find('(').ok_or_else(bad)?;
    let inner = s[open + 1..].strip_suffix(')').ok_or_else(bad)?;
    let family = s[..open].trim().to_ascii_lowercase().replace(['-', ' '], "_");
    let args = inner
        .split(',')
        .map(|a| a.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<Vec<_>>>()?;
    Ok((family, args))
}

/// Whether the unbounded random effects are sampled directly (`Centered`) or
/// as standardized variates scaled by their SD (`NonCentered`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parameterization {
    #[default]
    NonCentered,
    Centered,
}

impl fmt::Display for Parameterization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Parameterization::NonCentered => "non_centered",
            Parameterization::Centered => "centered",
        })
    }
}

impl FromStr for Parameterization {
    type Err = BablrError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "non_centered" | "noncentered" => Ok(Self::NonCentered),
            "centered" => Ok(Self::Centered),
            _ => Err(BablrError::InvalidPrior(format!("unknown parameterization `{s}`"))),
        }
    }
}

/// Hyperparameters for every prior term plus the optional change-point lower bound.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorConfig {
    pub beta1_0: NormalPrior,
    pub beta2_0: NormalPrior,
    /// Read as a half-normal on `(-inf, 0]`.
    pub beta3_0: NormalPrior,
    pub omega_0: NormalPrior,
    pub sigma_y: ScalePrior,
    pub sigma_u: [ScalePrior; 4],
    /// Locations of the random-effect priors. Must be zero.
    pub u_location: [f64; 4],
    pub cp_lower_bound: Option<f64>,
    pub parameterization: Parameterization,
}

impl PriorConfig {
    /// Priors used for synthetic-cohort fits (population change point near 10,
    /// no lower bound on change points).
    pub fn simulation() -> Self {
        Self {
            beta1_0: NormalPrior::new(0.0, 10.0),
            beta2_0: NormalPrior::new(0.0, 1.0),
            beta3_0: NormalPrior::new(0.0, 5.0),
            omega_0: NormalPrior::new(10.0, 10.0),
            sigma_y: ScalePrior::half_cauchy(0.0, 10.0),
            sigma_u: [
                ScalePrior::half_cauchy(0.0, 10.0),
                ScalePrior::half_cauchy(0.0, 1.0),
                ScalePrior::half_cauchy(0.0, 5.0),
                ScalePrior::half_cauchy(0.0, 10.0),
            ],
            u_location: [0.0; 4],
            cp_lower_bound: None,
            parameterization: Parameterization::NonCentered,
        }
    }

    /// Priors for age-scale cohort fits: change point prior mean 70, change
    /// points bounded below at 40, and `lognormal(0, 0.2)` on the pre-change
    /// slope SD.
    pub fn application() -> Self {
        let mut cfg = Self::simulation();
        cfg.omega_0 = NormalPrior::new(70.0, 10.0);
        cfg.sigma_u[1] = ScalePrior::lognormal(0.0, 0.2);
        cfg.cp_lower_bound = Some(40.0);
        cfg
    }

    /// All scale priors switched to `family`, keeping their location and scale.
    /// A lognormal family keeps each prior's parameters as `(log-location, log-scale)`.
    pub fn with_scale_family(&self, family: ScaleFamily) -> Self {
        let mut cfg = self.clone();
        cfg.sigma_y = cfg.sigma_y.with_family(family);
        for p in cfg.sigma_u.iter_mut() {
            *p = p.with_family(family);
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.beta1_0.validate("beta1_0")?;
        self.beta2_0.validate("beta2_0")?;
        self.beta3_0.validate("beta3_0")?;
        self.omega_0.validate("omega_0")?;
        self.sigma_y.validate("sigma_y")?;
        for (k, p) in self.sigma_u.iter().enumerate() {
            p.validate(&format!("sigma_u{}", k + 1))?;
        }
        if let Some(k) = self.u_location.iter().position(|&m| m != 0.0) {
            return Err(BablrError::InvalidPrior(format!(
                "random effect u{} has location {}; nonzero locations are not identifiable against the fixed effects",
                k + 1,
                self.u_location[k]
            )));
        }
        if let Some(l) = self.cp_lower_bound {
            if !l.is_finite() {
                return Err(BablrError::InvalidPrior("change-point lower bound must be finite".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn half_cauchy_reference_value() {
        let p = ScalePrior::half_cauchy(0.0, 1.0);
        assert_relative_eq!(p.ln_pdf(1.0), -1.144_729_885_849_400_2, epsilon = 1e-12);
        assert_relative_eq!(p.ln_pdf(1.0), (1.0 / std::f64::consts::PI).ln(), epsilon = 1e-14);
    }

    #[test]
    fn normal_reference_value() {
        assert_relative_eq!(NormalPrior::new(0.0, 10.0).ln_pdf(0.0), -(10f64.ln()) - 0.5 * (2.0 * std::f64::consts::PI).ln(), epsilon = 1e-14);
        assert!((NormalPrior::new(0.0, 10.0).ln_pdf(0.0) + 3.221_523_6).abs() < 1e-7);
    }

    #[test]
    fn half_t_reduces_to_half_cauchy_at_one_df() {
        let t = ScalePrior::half_student_t(1.0, 0.0, 2.5);
        let c = ScalePrior::half_cauchy(0.0, 2.5);
        for &x in &[0.01, 0.7, 3.0, 40.0] {
            assert_relative_eq!(t.ln_pdf(x), c.ln_pdf(x), epsilon = 1e-12);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let priors = [
            ScalePrior::half_cauchy(0.0, 10.0),
            ScalePrior::half_cauchy(0.5, 2.0),
            ScalePrior::half_normal(0.0, 5.0),
            ScalePrior::half_normal(-1.0, 2.0),
            ScalePrior::lognormal(0.0, 0.2),
            ScalePrior::half_student_t(3.0, 0.0, 1.0),
            ScalePrior::half_student_t(4.0, 1.0, 1.0),
        ];
        for p in priors {
            for &x in &[0.05, 0.9, 1.3, 7.0] {
                let h = 1e-4 * x;
                let fd = (p.ln_pdf(x + h) - p.ln_pdf(x - h)) / (2.0 * h);
                assert_relative_eq!(p.ln_pdf_and_deriv(x).1, fd, max_relative = 1e-6, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn outside_support_is_neg_infinity() {
        assert_eq!(ScalePrior::half_normal(0.0, 1.0).ln_pdf(-0.1), f64::NEG_INFINITY);
        assert_eq!(ScalePrior::lognormal(0.0, 1.0).ln_pdf(0.0), f64::NEG_INFINITY);
    }

    #[test]
    fn parse_and_display() {
        let p: ScalePrior = "lognormal(0,0.2)".parse().unwrap();
        assert_eq!(p, ScalePrior::lognormal(0.0, 0.2));
        assert_eq!(p.to_string(), "lognormal(0,0.2)");
        let p: ScalePrior = "half-Cauchy(0, 10)".parse().unwrap();
        assert_eq!(p, ScalePrior::half_cauchy(0.0, 10.0));
        let p: ScalePrior = "half_t(3,0,1)".parse().unwrap();
        assert_eq!(p.to_string().parse::<ScalePrior>().unwrap(), p);
        assert!("gamma(1,1)".parse::<ScalePrior>().is_err());
        assert!("half_normal(0,-1)".parse::<ScalePrior>().is_err());
    }

    #[test]
    fn nonzero_random_effect_location_is_rejected() {
        let mut cfg = PriorConfig::simulation();
        cfg.u_location[2] = 0.5;
        assert!(cfg.validate().is_err());
        assert!(PriorConfig::application().validate().is_ok());
    }

    #[test]
    fn application_defaults() {
        let cfg = PriorConfig::application();
        assert_eq!(cfg.cp_lower_bound, Some(40.0));
        assert_eq!(cfg.omega_0, NormalPrior::new(70.0, 10.0));
        assert_eq!(cfg.sigma_u[1], ScalePrior::lognormal(0.0, 0.2));
        assert_eq!(cfg.sigma_u[2], ScalePrior::half_cauchy(0.0, 5.0));
        assert_eq!(PriorConfig::simulation().sigma_u[1], ScalePrior::half_cauchy(0.0, 1.0));
    }
}
