//! Constrained-scale parameter types and the flat parameter index map.

use crate::error::{BablrError, Result};

/// Population-level (fixed) effects.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedEffects {
    /// Expected outcome at the change point.
    pub beta1: f64,
    /// Pre-change slope.
    pub beta2: f64,
    /// Slope decrement after the change point, `<= 0`.
    pub beta3: f64,
    /// Population change point.
    pub omega: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleParameters {
    /// Residual SD.
    pub sigma_y: f64,
    /// SDs of the four random effects.
    pub sigma_u: [f64; 4],
}

impl ScaleParameters {
    pub fn is_valid(&self) -> bool {
        std::iter::once(self.sigma_y)
            .chain(self.sigma_u)
            .all(|s| s > 0.0 && s.is_finite())
    }
}

/// Per-subject deviations from the fixed effects, one vector per effect.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SubjectEffects {
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
    pub u3: Vec<f64>,
    pub u4: Vec<f64>,
}

impl SubjectEffects {
    pub fn zeros(n: usize) -> Self {
        Self { u1: vec![0.0; n], u2: vec![0.0; n], u3: vec![0.0; n], u4: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.u1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u1.is_empty()
    }

    pub fn effect(&self, k: usize) -> &[f64] {
        match k {
            0 => &self.u1,
            1 => &self.u2,
            2 => &self.u3,
            3 => &self.u4,
            _ => panic!("random effect index {k} out of range"),
        }
    }

    pub fn effect_mut(&mut self, k: usize) -> &mut Vec<f64> {
        match k {
            0 => &mut self.u1,
            1 => &mut self.u2,
            2 => &mut self.u3,
            3 => &mut self.u4,
            _ => panic!("random effect index {k} out of range"),
        }
    }
}

/// One subject's bent-line parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubjectParams {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub omega: f64,
}

impl SubjectParams {
    pub fn mean_at(&self, t: f64) -> f64 {
        super::bent_line_mean(self.beta1, self.beta2, self.beta3, self.omega, t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub fixed: FixedEffects,
    pub scales: ScaleParameters,
    pub effects: SubjectEffects,
}

impl ModelParameters {
    pub fn n_subjects(&self) -> usize {
        self.effects.len()
    }

    pub fn subject(&self, i: usize) -> SubjectParams {
        SubjectParams {
            beta1: self.fixed.beta1 + self.effects.u1[i],
            beta2: self.fixed.beta2 + self.effects.u2[i],
            beta3: self.fixed.beta3 + self.effects.u3[i],
            omega: self.fixed.omega + self.effects.u4[i],
        }
    }

    /// Flattens in [`ParameterLayout`] order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = vec![0.0; ParameterLayout::dim_for(self.n_subjects())];
        self.write_flat(&mut out);
        out
    }

    pub fn write_flat(&self, out: &mut [f64]) {
        let n = self.n_subjects();
        out[0] = self.fixed.beta1;
        out[1] = self.fixed.beta2;
        out[2] = self.fixed.beta3;
        out[3] = self.fixed.omega;
        out[4] = self.scales.sigma_y;
        out[5..9].copy_from_slice(&self.scales.sigma_u);
        for k in 0..4 {
            let start = ParameterLayout::N_POPULATION + k * n;
            out[start..start + n].copy_from_slice(self.effects.effect(k));
        }
    }

    pub fn from_flat(values: &[f64], n_subjects: usize) -> Result<Self> {
        let dim = ParameterLayout::dim_for(n_subjects);
        if values.len() != dim {
            return Err(BablrError::InvalidArgument(format!(
                "expected {dim} values for {n_subjects} subjects, got {}",
                values.len()
            )));
        }
        let mut effects = SubjectEffects::zeros(n_subjects);
        for k in 0..4 {
            let start = ParameterLayout::N_POPULATION + k * n_subjects;
            effects.effect_mut(k).copy_from_slice(&values[start..start + n_subjects]);
        }
        Ok(Self {
            fixed: FixedEffects { beta1: values[0], beta2: values[1], beta3: values[2], omega: values[3] },
            scales: ScaleParameters {
                sigma_y: values[4],
                sigma_u: [values[5], values[6], values[7], values[8]],
            },
            effects,
        })
    }
}

/// Position-to-name map for flat parameter vectors.
///
/// Order: `beta1_0, beta2_0, beta3_0, omega_0, sigma_y, sigma_u1..sigma_u4`,
/// then `u1[id]` for every subject, then `u2[id]`, `u3[id]`, `u4[id]`.
/// The unconstrained sampler coordinates use the same positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParameterLayout {
    subject_ids: Vec<String>,
}

impl ParameterLayout {
    pub const N_POPULATION: usize = 9;
    pub const POPULATION_NAMES: [&'static str; 9] = [
        "beta1_0", "beta2_0", "beta3_0", "omega_0", "sigma_y", "sigma_u1", "sigma_u2", "sigma_u3",
        "sigma_u4",
    ];
    pub const BETA1_0: usize = 0;
    pub const BETA2_0: usize = 1;
    pub const BETA3_0: usize = 2;
    pub const OMEGA_0: usize = 3;
    pub const SIGMA_Y: usize = 4;
    pub const SIGMA_U: [usize; 4] = [5, 6, 7, 8];

    pub fn new(subject_ids: Vec<String>) -> Self {
        Self { subject_ids }
    }

    pub const fn dim_for(n_subjects: usize) -> usize {
        Self::N_POPULATION + 4 * n_subjects
    }

    pub fn dim(&self) -> usize {
        Self::dim_for(self.subject_ids.len())
    }

    pub fn n_subjects(&self) -> usize {
        self.subject_ids.len()
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    pub fn subject_index(&self, id: &str) -> Option<usize> {
        self.subject_ids.iter().position(|s| s == id)
    }

    /// Index of random effect `k` (0-based: u1..u4) for subject `i`.
    #[inline]
    pub fn effect_index(&self, k: usize, i: usize) -> usize {
        Self::N_POPULATION + k * self.subject_ids.len() + i
    }

    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = Self::POPULATION_NAMES.iter().map(|s| s.to_string()).collect();
        for k in 1..=4 {
            names.extend(self.subject_ids.iter().map(|id| format!("u{k}[{id}]")));
        }
        names
    }

    /// Recovers the layout from parameter names in [`names`](Self::names) order.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let bad = |msg: String| BablrError::InvalidArgument(format!("parameter names: {msg}"));
        if names.len() < Self::N_POPULATION || (names.len() - Self::N_POPULATION) % 4 != 0 {
            return Err(bad(format!("unexpected count {}", names.len())));
        }
        for (got, want) in names.iter().zip(Self::POPULATION_NAMES) {
            if got.as_ref() != want {
                return Err(bad(format!("expected `{want}`, found `{}`", got.as_ref())));
            }
        }
        let n = (names.len() - Self::N_POPULATION) / 4;
        let ids: Vec<String> = names[Self::N_POPULATION..Self::N_POPULATION + n]
            .iter()
            .map(|name| {
                name.as_ref()
                    .strip_prefix("u1[")
                    .and_then(|r| r.strip_suffix(']'))
                    .map(str::to_string)
                    .ok_or_else(|| bad(format!("malformed name `{}`", name.as_ref())))
            })
            .collect::<Result<_>>()?;
        let layout = Self::new(ids);
        if layout.names().iter().zip(names).any(|(a, b)| a != b.as_ref()) {
            return Err(bad("random-effect names out of order".into()));
        }
        Ok(layout)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        let layout = ParameterLayout::new(vec!["a".into(), "b[2]".into(), "c".into()]);
        assert_eq!(layout.dim(), 21);
        let names = layout.names();
        assert_eq!(names[9], "u1[a]");
        assert_eq!(names[layout.effect_index(3, 2)], "u4[c]");
        assert_eq!(ParameterLayout::from_names(&names).unwrap(), layout);
        assert!(ParameterLayout::from_names(&names[1..]).is_err());
    }

    #[test]
    fn flat_round_trip() {
        let values: Vec<f64> = (0..ParameterLayout::dim_for(2)).map(|i| i as f64 + 0.5).collect();
        let params = ModelParameters::from_flat(&values, 2).unwrap();
        assert_eq!(params.effects.u3, vec![13.5, 14.5]);
        assert_eq!(params.to_flat(), values);
        let s = params.subject(1);
        assert_eq!(s.omega, 3.5 + 16.5);
    }
}
