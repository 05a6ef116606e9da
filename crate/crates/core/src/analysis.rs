//! Posterior summaries, trajectory quantiles, random-effect correlations and
//! held-out predictive validation.

use rayon::prelude::*;

use crate::data::HeldOutObservation;
use crate::error::{BablrError, Result};
use crate::model::{ParameterLayout, SubjectParams};
use crate::sampler::DrawsStore;
use crate::stats::{mean, pearson, quantile_sorted, quantiles, std_normal_cdf, variance};

/// Marginal posterior summary of one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    /// 2.5% quantile.
    pub lower: f64,
    /// 97.5% quantile.
    pub upper: f64,
}

impl ParameterSummary {
    pub fn from_values(name: impl Into<String>, values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self {
            name: name.into(),
            mean: mean(values),
            sd: if values.len() > 1 { variance(values).sqrt() } else { 0.0 },
            median: quantile_sorted(&sorted, 0.5),
            lower: quantile_sorted(&sorted, 0.025),
            upper: quantile_sorted(&sorted, 0.975),
        }
    }

    pub fn covers(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }
}

/// Median, equal-tailed 95% interval, mean and SD of every stored parameter.
pub fn summarize(draws: &DrawsStore) -> Vec<ParameterSummary> {
    (0..draws.dim())
        .into_par_iter()
        .map(|p| ParameterSummary::from_values(draws.names()[p].clone(), &draws.pooled(p)))
        .collect()
}

/// Model-aware view of a [`DrawsStore`] holding bent-line parameters.
pub struct FitView<'a> {
    draws: &'a DrawsStore,
    layout: ParameterLayout,
}

impl<'a> FitView<'a> {
    pub fn new(draws: &'a DrawsStore) -> Result<Self> {
        let layout = ParameterLayout::from_names(draws.names())?;
        Ok(Self { draws, layout })
    }

    pub fn layout(&self) -> &ParameterLayout {
        &self.layout
    }

    pub fn draws(&self) -> &DrawsStore {
        self.draws
    }

    fn subject_from(&self, d: &[f64], i: usize) -> SubjectParams {
        let l = &self.layout;
        SubjectParams {
            beta1: d[ParameterLayout::BETA1_0] + d[l.effect_index(0, i)],
            beta2: d[ParameterLayout::BETA2_0] + d[l.effect_index(1, i)],
            beta3: d[ParameterLayout::BETA3_0] + d[l.effect_index(2, i)],
            omega: d[ParameterLayout::OMEGA_0] + d[l.effect_index(3, i)],
        }
    }

    /// Subject `i`'s parameters in every draw.
    pub fn subject_draws(&self, i: usize) -> Vec<SubjectParams> {
        self.draws.iter_draws().map(|d| self.subject_from(d, i)).collect()
    }

    pub fn subject_index(&self, id: &str) -> Result<usize> {
        self.layout.subject_index(id).ok_or_else(|| BablrError::UnknownSubject(id.to_string()))
    }

    pub fn sigma_y_draws(&self) -> Vec<f64> {
        self.draws.pooled(ParameterLayout::SIGMA_Y)
    }
}

/// Quantile curves over an age grid; `values[q][a]` is quantile `quantiles[q]` at `age_grid[a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileCurves {
    pub age_grid: Vec<f64>,
    pub quantiles: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl QuantileCurves {
    fn from_columns(age_grid: &[f64], qs: &[f64], columns: Vec<Vec<f64>>) -> Self {
        let values = (0..qs.len()).map(|q| columns.iter().map(|c| c[q]).collect()).collect();
        Self { age_grid: age_grid.to_vec(), quantiles: qs.to_vec(), values }
    }

    /// True when every grid point has curves nondecreasing in the quantile level.
    pub fn is_monotone_in_q(&self) -> bool {
        (0..self.age_grid.len()).all(|a| self.values.windows(2).all(|w| w[0][a] <= w[1][a]))
    }
}

fn validate_quantiles(qs: &[f64]) -> Result<()> {
    if qs.is_empty() || qs.iter().any(|q| !(*q > 0.0 && *q < 1.0)) || qs.windows(2).any(|w| w[0] >= w[1]) {
        return Err(BablrError::InvalidArgument(
            "quantiles must be nonempty, strictly increasing and inside (0, 1)".into(),
        ));
    }
    Ok(())
}

/// Quantile bands of one subject's expected trajectory across draws.
///
/// Residual noise is not included.
pub fn individual_trajectory(
    draws: &DrawsStore,
    subject_id: &str,
    age_grid: &[f64],
    qs: &[f64],
) -> Result<QuantileCurves> {
    validate_quantiles(qs)?;
    let view = FitView::new(draws)?;
    let subject = view.subject_draws(view.subject_index(subject_id)?);
    let columns = age_grid
        .par_iter()
        .map(|&t| quantiles(&subject.iter().map(|s| s.mean_at(t)).collect::<Vec<_>>(), qs))
        .collect();
    Ok(QuantileCurves::from_columns(age_grid, qs, columns))
}

/// How population curves aggregate subjects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CurveMode {
    /// Quantiles across subjects of each subject's posterior-median trajectory.
    #[default]
    MedianTrajectories,
    /// Quantiles of all subject trajectories in all draws pooled together.
    PooledDraws,
}

/// Posterior-median trajectory of every subject over the grid, `[subject][age]`.
pub fn median_trajectories(draws: &DrawsStore, age_grid: &[f64]) -> Result<Vec<Vec<f64>>> {
    let view = FitView::new(draws)?;
    Ok((0..view.layout().n_subjects())
        .into_par_iter()
        .map(|i| {
            let subject = view.subject_draws(i);
            age_grid
                .iter()
                .map(|&t| quantiles(&subject.iter().map(|s| s.mean_at(t)).collect::<Vec<_>>(), &[0.5])[0])
                .collect()
        })
        .collect())
}

/// Population quantile curves.
pub fn population_quantile_curves(
    draws: &DrawsStore,
    age_grid: &[f64],
    qs: &[f64],
    mode: CurveMode,
) -> Result<QuantileCurves> {
    validate_quantiles(qs)?;
    let view = FitView::new(draws)?;
    let n = view.layout().n_subjects();
    if n == 0 {
        return Err(BablrError::InvalidArgument("fit has no subjects".into()));
    }
    let columns = match mode {
        CurveMode::MedianTrajectories => {
            let medians = median_trajectories(draws, age_grid)?;
            (0..age_grid.len())
                .map(|a| quantiles(&medians.iter().map(|m| m[a]).collect::<Vec<_>>(), qs))
                .collect()
        }
        CurveMode::PooledDraws => {
            let subjects: Vec<Vec<SubjectParams>> = (0..n).map(|i| view.subject_draws(i)).collect();
            age_grid
                .par_iter()
                .map(|&t| {
                    let all: Vec<f64> = subjects.iter().flatten().map(|s| s.mean_at(t)).collect();
                    quantiles(&all, qs)
                })
                .collect()
        }
    };
    Ok(QuantileCurves::from_columns(age_grid, qs, columns))
}

/// Pairs of random effects (0-based) in reporting order.
pub const EFFECT_PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

/// Posterior of the across-subject correlation of one random-effect pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairCorrelation {
    pub first: usize,
    pub second: usize,
    /// One value per draw where both effects vary across subjects.
    pub values: Vec<f64>,
    /// Draws skipped because an effect had zero variance.
    pub skipped: usize,
    pub mean: f64,
    pub sd: f64,
}

impl PairCorrelation {
    pub fn label(&self) -> String {
        format!("rho_u{}_u{}", self.first + 1, self.second + 1)
    }
}

/// Per-draw Pearson correlation across subjects for each of the six effect pairs.
pub fn random_effect_correlations(draws: &DrawsStore) -> Result<Vec<PairCorrelation>> {
    let view = FitView::new(draws)?;
    let layout = view.layout();
    let n = layout.n_subjects();
    if n < 3 {
        return Err(BablrError::InvalidArgument(format!("correlations need at least 3 subjects, got {n}")));
    }
    let per_draw: Vec<[Option<f64>; 6]> = draws
        .iter_draws()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|d| {
            let start = |k: usize| layout.effect_index(k, 0);
            let effect = |k: usize| &d[start(k)..start(k) + n];
            EFFECT_PAIRS.map(|(a, b)| pearson(effect(a), effect(b)))
        })
        .collect();
    Ok(EFFECT_PAIRS
        .iter()
        .enumerate()
        .map(|(p, &(first, second))| {
            let values: Vec<f64> = per_draw.iter().filter_map(|r| r[p]).collect();
            let skipped = per_draw.len() - values.len();
            let (m, sd) = match values.len() {
                0 => (f64::NAN, f64::NAN),
                1 => (values[0], 0.0),
                _ => (mean(&values), variance(&values).sqrt()),
            };
            PairCorrelation { first, second, values, skipped, mean: m, sd }
        })
        .collect())
}

/// Mixture of normals `Y = mu + X` over posterior draws: `mu` is a draw of a
/// subject's expected outcome and `X ~ N(0, sigma)` with the paired residual SD.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDistribution {
    mu: Vec<f64>,
    sigma: Vec<f64>,
}

impl PredictiveDistribution {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if mu.is_empty() || mu.len() != sigma.len() {
            return Err(BablrError::InvalidArgument("predictive draws must be nonempty and paired".into()));
        }
        if sigma.iter().any(|s| !(*s > 0.0 && s.is_finite())) || mu.iter().any(|m| !m.is_finite()) {
            return Err(BablrError::InvalidArgument("predictive draws must be finite with positive SD".into()));
        }
        Ok(Self { mu, sigma })
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    /// `(1/n) sum Φ((y - mu_k) / sigma_k)`.
    pub fn cdf(&self, y: f64) -> f64 {
        let total: f64 = self.mu.iter().zip(&self.sigma).map(|(m, s)| std_normal_cdf((y - m) / s)).sum();
        (total / self.mu.len() as f64).clamp(0.0, 1.0)
    }

    /// Inverts [`cdf`](Self::cdf) by bisection.
    pub fn quantile(&self, q: f64) -> f64 {
        assert!(q > 0.0 && q < 1.0, "quantile level must be in (0, 1)");
        let spread = self.sigma.iter().copied().fold(0.0, f64::max) * 40.0;
        let mut lo = self.mu.iter().copied().fold(f64::INFINITY, f64::min) - spread;
        let mut hi = self.mu.iter().copied().fold(f64::NEG_INFINITY, f64::max) + spread;
        while hi - lo > 1e-10 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.cdf(mid) < q {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

pub fn predictive_cdf(pd: &PredictiveDistribution, y: f64) -> f64 {
    pd.cdf(y)
}

/// Predictive distribution of a new observation of subject `i` at `time`.
pub fn predictive_for(view: &FitView<'_>, i: usize, time: f64) -> Result<PredictiveDistribution> {
    let mu = view.subject_draws(i).iter().map(|s| s.mean_at(time)).collect();
    PredictiveDistribution::new(mu, view.sigma_y_draws())
}

#[derive(Debug, Clone, PartialEq)]
pub struct HoldoutPoint {
    pub subject_id: String,
    pub time: f64,
    pub y: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
    pub inside: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HoldoutReport {
    pub points: Vec<HoldoutPoint>,
    /// Fraction of held-out values inside their 95% predictive interval.
    pub coverage: f64,
}

/// Checks held-out observations against their 95% posterior predictive intervals.
pub fn holdout_validation(draws: &DrawsStore, heldout: &[HeldOutObservation]) -> Result<HoldoutReport> {
    let view = FitView::new(draws)?;
    let points = heldout
        .par_iter()
        .map(|h| {
            let pd = predictive_for(&view, view.subject_index(&h.subject_id)?, h.time)?;
            let (q025, q50, q975) = (pd.quantile(0.025), pd.quantile(0.5), pd.quantile(0.975));
            Ok(HoldoutPoint {
                subject_id: h.subject_id.clone(),
                time: h.time,
                y: h.outcome,
                q025,
                q50,
                q975,
                inside: q025 <= h.outcome && h.outcome <= q975,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let coverage = if points.is_empty() {
        f64::NAN
    } else {
        points.iter().filter(|p| p.inside).count() as f64 / points.len() as f64
    };
    Ok(HoldoutReport { points, coverage })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal, StandardNormal};

    /// Builds a store for `n` subjects from per-draw closures over the flat layout.
    fn store(ids: &[&str], n_draws: usize, mut fill: impl FnMut(usize, &mut [f64])) -> DrawsStore {
        let layout = ParameterLayout::new(ids.iter().map(|s| s.to_string()).collect());
        let dim = layout.dim();
        let mut values = vec![0.0; n_draws * dim];
        for (k, d) in values.chunks_exact_mut(dim).enumerate() {
            d[ParameterLayout::SIGMA_Y] = 1.0;
            for s in ParameterLayout::SIGMA_U {
                d[s] = 1.0;
            }
            fill(k, d);
        }
        DrawsStore::from_draws(layout.names(), 1, n_draws, values).unwrap()
    }

    #[test]
    fn summary_of_small_sample() {
        let s = ParameterSummary::from_values("x", &[5.0, 1.0, 3.0, 2.0, 4.0]);
        assert_eq!(s.median, 3.0);
        assert_eq!(s.mean, 3.0);
        let c = ParameterSummary::from_values("c", &[1.25; 10]);
        assert_eq!((c.lower, c.upper), (1.25, 1.25));
    }

    #[test]
    fn summary_interval_of_normal_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..100_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let s = ParameterSummary::from_values("x", &x);
        assert!((s.lower + 1.959_964).abs() < 0.02 && (s.upper - 1.959_964).abs() < 0.02);
    }

    #[test]
    fn one_draw_bands_collapse() {
        let st = store(&["a"], 1, |_, d| {
            d[0] = 1.0;
            d[1] = 0.1;
            d[2] = -0.3;
            d[3] = 60.0;
        });
        let grid = [50.0, 60.0, 70.0];
        let c = individual_trajectory(&st, "a", &grid, &[0.05, 0.5, 0.95]).unwrap();
        for (a, &t) in grid.iter().enumerate() {
            let expect = crate::model::bent_line_mean(1.0, 0.1, -0.3, 60.0, t);
            for q in 0..3 {
                assert_eq!(c.values[q][a], expect);
            }
        }
        assert!(individual_trajectory(&st, "zz", &grid, &[0.5]).is_err());
    }

    #[test]
    fn symmetric_intercepts_give_middle_median() {
        let st = store(&["a"], 2, |k, d| {
            d[0] = if k == 0 { 1.0 } else { -1.0 };
            d[1] = 0.2;
            d[2] = -0.1;
            d[3] = 5.0;
        });
        let grid = [0.0, 5.0, 9.0];
        let c = individual_trajectory(&st, "a", &grid, &[0.5]).unwrap();
        for (a, &t) in grid.iter().enumerate() {
            assert_relative_eq!(c.values[0][a], crate::model::bent_line_mean(0.0, 0.2, -0.1, 5.0, t), epsilon = 1e-12);
        }
    }

    #[test]
    fn band_width_matches_quantile_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let normal = Normal::new(0.0, 0.5).unwrap();
        let b1: Vec<f64> = (0..4000).map(|_| normal.sample(&mut rng)).collect();
        let st = store(&["a"], b1.len(), |k, d| {
            d[0] = b1[k];
            d[1] = -0.01;
            d[2] = -0.05;
            d[3] = 70.0;
        });
        let grid = [60.0, 70.0, 80.0];
        let c = individual_trajectory(&st, "a", &grid, &[0.025, 0.975]).unwrap();
        for (a, &t) in grid.iter().enumerate() {
            let shift = crate::model::bent_line_mean(0.0, -0.01, -0.05, 70.0, t);
            let oracle = quantiles(&b1, &[0.025, 0.975]);
            assert_relative_eq!(c.values[0][a], oracle[0] + shift, epsilon = 1e-12);
            assert_relative_eq!(c.values[1][a], oracle[1] + shift, epsilon = 1e-12);
            assert!((c.values[1][a] - c.values[0][a]) / 2.0 > 1.9 * 0.5 * 0.95);
        }
    }

    #[test]
    fn single_subject_population_equals_its_median() {
        let st = store(&["a"], 3, |k, d| {
            d[0] = k as f64;
            d[1] = 0.1;
            d[2] = -0.2;
            d[3] = 10.0;
        });
        let grid = [0.0, 10.0, 20.0];
        let c = population_quantile_curves(&st, &grid, &[0.1, 0.5, 0.9], CurveMode::MedianTrajectories).unwrap();
        let med = median_trajectories(&st, &grid).unwrap();
        for q in 0..3 {
            assert_eq!(c.values[q], med[0]);
        }
    }

    #[test]
    fn two_flat_subjects_median_is_midpoint() {
        let st = store(&["a", "b"], 1, |_, d| {
            d[2] = -1e-300;
            d[9] = -1.0;
            d[10] = 1.0;
        });
        let c = population_quantile_curves(&st, &[1.0, 2.0], &[0.5], CurveMode::MedianTrajectories).unwrap();
        assert_eq!(c.values[0], vec![0.0, 0.0]);
    }

    #[test]
    fn population_median_of_spread_change_points_has_no_single_kink() {
        let ids: Vec<String> = (0..41).map(|i| format!("s{i}")).collect();
        let id_refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let n = ids.len();
        let layout = ParameterLayout::new(ids.clone());
        let st = store(&id_refs, 1, |_, d| {
            d[1] = 0.2;
            d[2] = -1.0;
            d[3] = 60.0;
            for i in 0..n {
                d[layout.effect_index(3, i)] = -10.0 + 20.0 * i as f64 / (n - 1) as f64;
            }
        });
        let grid: Vec<f64> = (0..=80).map(|k| 40.0 + 0.5 * k as f64).collect();
        let c = population_quantile_curves(&st, &grid, &[0.5], CurveMode::MedianTrajectories).unwrap();
        let max_second_diff = |v: &[f64]| v.windows(3).map(|w| (w[0] - 2.0 * w[1] + w[2]).abs()).fold(0.0, f64::max);
        let pop = max_second_diff(&c.values[0]);
        for m in median_trajectories(&st, &grid).unwrap() {
            assert!(pop < max_second_diff(&m));
        }
    }

    #[test]
    fn pooled_mode_mixes_draws() {
        let st = store(&["a"], 2, |k, d| {
            d[0] = if k == 0 { 0.0 } else { 4.0 };
            d[2] = -1e-300;
        });
        let c = population_quantile_curves(&st, &[0.0], &[0.5], CurveMode::PooledDraws).unwrap();
        assert_eq!(c.values[0][0], 2.0);
    }

    #[test]
    fn collinear_effects_have_unit_correlation() {
        let ids = ["a", "b", "c", "d"];
        let layout = ParameterLayout::new(ids.iter().map(|s| s.to_string()).collect());
        let st = store(&ids, 5, |k, d| {
            for i in 0..4 {
                let v = (i as f64 + 1.0) * (k as f64 + 1.0);
                d[layout.effect_index(0, i)] = v;
                d[layout.effect_index(1, i)] = v;
            }
        });
        let corr = random_effect_correlations(&st).unwrap();
        assert_eq!(corr[0].label(), "rho_u1_u2");
        assert!(corr[0].values.iter().all(|r| (r - 1.0).abs() < 1e-12));
        assert_eq!(corr[1].skipped, 5);
    }

    #[test]
    fn independent_effects_are_uncorrelated() {
        let n = 1000;
        let ids: Vec<String> = (0..n).map(|i| i.to_string()).collect();
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let layout = ParameterLayout::new(ids.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let st = store(&refs, 20, |_, d| {
            for k in 0..4 {
                for i in 0..n {
                    d[layout.effect_index(k, i)] = StandardNormal.sample(&mut rng);
                }
            }
        });
        for pair in random_effect_correlations(&st).unwrap() {
            assert!(pair.mean.abs() < 0.1);
            assert!(pair.mean.abs() < 2.0 / (n as f64).sqrt());
        }
    }

    #[test]
    fn predictive_cdf_reference_points() {
        let pd = PredictiveDistribution::new(vec![2.0; 5], vec![0.7; 5]).unwrap();
        assert_eq!(predictive_cdf(&pd, 2.0), 0.5);
        let one = PredictiveDistribution::new(vec![1.0], vec![0.3]).unwrap();
        assert_relative_eq!(one.cdf(1.0 + 1.96 * 0.3), 0.975_002_1, epsilon = 1e-7);
        let two = PredictiveDistribution::new(vec![0.5, 1.5], vec![0.4, 0.4]).unwrap();
        assert_relative_eq!(two.cdf(1.0), 0.5, epsilon = 1e-15);
        assert!(PredictiveDistribution::new(vec![], vec![]).is_err());
        assert!(PredictiveDistribution::new(vec![0.0], vec![0.0]).is_err());
    }

    #[test]
    fn holdout_scores_inside_and_outside() {
        let st = store(&["a"], 3, |k, d| {
            d[0] = k as f64 * 0.1;
            d[2] = -0.5;
            d[ParameterLayout::SIGMA_Y] = 0.2;
        });
        let view = FitView::new(&st).unwrap();
        let median = predictive_for(&view, 0, 1.0).unwrap().quantile(0.5);
        let held = vec![
            HeldOutObservation { subject_id: "a".into(), time: 1.0, outcome: median },
            HeldOutObservation { subject_id: "a".into(), time: 1.0, outcome: 50.0 },
        ];
        let r = holdout_validation(&st, &held).unwrap();
        assert!(r.points[0].inside && !r.points[1].inside);
        assert_eq!(r.coverage, 0.5);
        let missing = [HeldOutObservation { subject_id: "zz".into(), time: 0.0, outcome: 0.0 }];
        assert!(holdout_validation(&st, &missing).is_err());
    }

    fn arb_pd() -> impl Strategy<Value = PredictiveDistribution> {
        prop::collection::vec((-10.0..10.0f64, 0.01..3.0f64), 1..40).prop_map(|v| {
            let (mu, sigma) = v.into_iter().unzip();
            PredictiveDistribution::new(mu, sigma).unwrap()
        })
    }

    proptest! {
        #[test]
        fn cdf_is_monotone(pd in arb_pd()) {
            let mut prev = 0.0;
            for k in 0..=400 {
                let y = -30.0 + 0.15 * k as f64;
                let c = pd.cdf(y);
                prop_assert!((0.0..=1.0).contains(&c) && c >= prev);
                prev = c;
            }
            prop_assert!(pd.cdf(-1e6) < 1e-12 && pd.cdf(1e6) > 1.0 - 1e-12);
        }

        #[test]
        fn quantile_inverts_cdf(pd in arb_pd()) {
            for q in [0.025, 0.5, 0.975] {
                prop_assert!((pd.cdf(pd.quantile(q)) - q).abs() < 1e-6);
            }
        }

        #[test]
        fn curves_are_monotone_in_q(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ids = ["a", "b", "c"];
            let st = store(&ids, 30, |_, d| {
                for v in d.iter_mut().take(2) {
                    *v = StandardNormal.sample(&mut rng);
                }
                d[2] = -0.5;
                d[3] = 5.0;
                for v in d.iter_mut().skip(9) {
                    *v = StandardNormal.sample(&mut rng);
                }
                for i in 0..3 {
                    d[9 + 2 * 3 + i] = -d[2] - 0.1 - d[9 + 2 * 3 + i].abs();
                }
            });
            let grid: Vec<f64> = (0..11).map(|k| k as f64).collect();
            let qs = [0.05, 0.25, 0.5, 0.75, 0.95];
            for mode in [CurveMode::MedianTrajectories, CurveMode::PooledDraws] {
                prop_assert!(population_quantile_curves(&st, &grid, &qs, mode).unwrap().is_monotone_in_q());
            }
            prop_assert!(individual_trajectory(&st, "b", &grid, &qs).unwrap().is_monotone_in_q());
        }
    }
}
