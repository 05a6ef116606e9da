//! Convergence and efficiency diagnostics.
//!
//! All functions take one parameter's draws as a slice of chains. Chains are
//! split in half before any computation; an odd middle draw is dropped.
//! Degenerate inputs give `None` rather than a misleading number.

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::sampler::DrawsStore;
use crate::stats::std_normal_inv_cdf;

fn split_chains(chains: &[Vec<f64>]) -> Vec<&[f64]> {
    chains
        .iter()
        .flat_map(|c| {
            let half = c.len() / 2;
            [&c[..half], &c[c.len() - half..]]
        })
        .collect()
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

fn check_shape(chains: &[Vec<f64>], min_len: usize) -> bool {
    !chains.is_empty()
        && chains.iter().all(|c| c.len() == chains[0].len())
        && chains[0].len() >= min_len
        && chains.iter().flatten().all(|v| v.is_finite())
}

/// Split potential scale reduction factor.
///
/// `R = sqrt((W (n-1)/n + B/n) / W)` over the half-chains, with `W` the mean
/// within-chain variance and `B/n` the variance of the half-chain means.
/// `None` when fewer than two draws per chain or a half-chain has zero variance.
pub fn split_rhat(chains: &[Vec<f64>]) -> Option<f64> {
    if !check_shape(chains, 4) {
        return None;
    }
    let halves = split_chains(chains);
    let n = halves[0].len() as f64;
    let stats: Vec<(f64, f64)> = halves.iter().map(|h| mean_var(h)).collect();
    let m = stats.len() as f64;
    let w = stats.iter().map(|s| s.1).sum::<f64>() / m;
    if !(w > 0.0) {
        return None;
    }
    let grand = stats.iter().map(|s| s.0).sum::<f64>() / m;
    let b_over_n = stats.iter().map(|s| (s.0 - grand).powi(2)).sum::<f64>() / (m - 1.0);
    let var_plus = w * (n - 1.0) / n + b_over_n;
    Some((var_plus / w).sqrt())
}

/// Autocovariance `acov[t] = (1/n) sum_i (x_i - m)(x_{i+t} - m)` for all lags, via FFT.
pub fn autocovariance(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let len = (2 * n).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);
    let mut buf: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(v - mean, 0.0)).collect();
    buf.resize(len, Complex::new(0.0, 0.0));
    fwd.process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    inv.process(&mut buf);
    let scale = 1.0 / (len as f64 * n as f64);
    buf[..n].iter().map(|c| c.re * scale).collect()
}

/// ESS of already split chains using Geyer's initial monotone sequence.
fn ess_of_halves(halves: &[&[f64]]) -> Option<f64> {
    let m = halves.len();
    let n = halves[0].len();
    if n < 4 {
        return None;
    }
    let acov: Vec<Vec<f64>> = halves.iter().map(|h| autocovariance(h)).collect();
    let means: Vec<f64> = halves.iter().map(|h| h.iter().sum::<f64>() / n as f64).collect();
    let nf = n as f64;
    let mean_var = acov.iter().map(|a| a[0] * nf / (nf - 1.0)).sum::<f64>() / m as f64;
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        let grand = means.iter().sum::<f64>() / m as f64;
        var_plus += means.iter().map(|v| (v - grand).powi(2)).sum::<f64>() / (m as f64 - 1.0);
    }
    if !(var_plus > 0.0) || !var_plus.is_finite() {
        return None;
    }
    let mean_acov = |t: usize| acov.iter().map(|a| a[t]).sum::<f64>() / m as f64;
    let rho = |t: usize| 1.0 - (mean_var - mean_acov(t)) / var_plus;

    let mut rho_hat = vec![0.0; n];
    let mut rho_even = 1.0;
    rho_hat[0] = rho_even;
    let mut rho_odd = rho(1);
    rho_hat[1] = rho_odd;
    let mut s = 1;
    while s < n - 4 && rho_even + rho_odd > 0.0 {
        rho_even = rho(s + 1);
        rho_odd = rho(s + 2);
        if rho_even + rho_odd >= 0.0 {
            rho_hat[s + 1] = rho_even;
            rho_hat[s + 2] = rho_odd;
        }
        s += 2;
    }
    let max_s = s;
    if rho_even > 0.0 {
        rho_hat[max_s + 1] = rho_even;
    }
    let mut s = 1;
    while s + 3 <= max_s {
        if rho_hat[s + 1] + rho_hat[s + 2] > rho_hat[s - 1] + rho_hat[s] {
            rho_hat[s + 1] = (rho_hat[s - 1] + rho_hat[s]) / 2.0;
            rho_hat[s + 2] = rho_hat[s + 1];
        }
        s += 2;
    }
    let total = (m * n) as f64;
    let tau = -1.0 + 2.0 * rho_hat[..max_s].iter().sum::<f64>() + rho_hat[max_s + 1];
    Some((total / tau).min(total * total.log10()))
}

/// Effective sample size of the raw draws (used for the mean MCSE).
pub fn ess_basic(chains: &[Vec<f64>]) -> Option<f64> {
    if !check_shape(chains, 8) {
        return None;
    }
    ess_of_halves(&split_chains(chains))
}

/// Rank-normalized bulk effective sample size.
///
/// Pooled draws are replaced by normal scores of their average ranks using
/// Blom offsets `(r - 3/8) / (S + 1/4)`. The inverse CDF is evaluated on the
/// smaller tail so the scores of reversed ranks are exact negatives, which
/// makes the result invariant under any nonconstant affine map.
pub fn ess_bulk(chains: &[Vec<f64>]) -> Option<f64> {
    if !check_shape(chains, 8) {
        return None;
    }
    let halves = split_chains(chains);
    let n = halves[0].len();
    let pooled: Vec<f64> = halves.iter().flat_map(|h| h.iter().copied()).collect();
    let first = pooled[0];
    if pooled.iter().all(|&v| v == first) {
        return None;
    }
    let z = normal_scores(&pooled);
    let z_halves: Vec<&[f64]> = z.chunks_exact(n).collect();
    ess_of_halves(&z_halves)
}

fn normal_scores(x: &[f64]) -> Vec<f64> {
    let s = x.len();
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; s];
    let mut i = 0;
    while i < s {
        let mut j = i;
        while j + 1 < s && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        // Average of 1-based ranks i+1..=j+1.
        let r = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    let denom = s as f64 + 0.25;
    ranks
        .iter()
        .map(|&r| {
            let lower = r - 0.375;
            let upper = denom - lower;
            if lower <= upper {
                std_normal_inv_cdf(lower / denom)
            } else {
                -std_normal_inv_cdf(upper / denom)
            }
        })
        .collect()
}

/// Monte Carlo standard error of the mean, `sd / sqrt(ess_basic)`.
pub fn mcse_mean(chains: &[Vec<f64>]) -> Option<f64> {
    let ess = ess_basic(chains)?;
    let pooled: Vec<f64> = chains.iter().flatten().copied().collect();
    let (_, var) = mean_var(&pooled);
    Some((var / ess).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterDiagnostics {
    pub name: String,
    pub rhat: Option<f64>,
    pub ess_bulk: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsReport {
    pub parameters: Vec<ParameterDiagnostics>,
    pub divergences: usize,
    pub treedepth_hits: usize,
    pub max_treedepth: usize,
    pub accept_per_chain: Vec<f64>,
}

impl DiagnosticsReport {
    pub fn from_draws(draws: &DrawsStore, max_treedepth: usize) -> Self {
        let parameters = (0..draws.dim())
            .into_par_iter()
            .map(|p| {
                let series = draws.chain_series(p);
                ParameterDiagnostics {
                    name: draws.names()[p].clone(),
                    rhat: split_rhat(&series),
                    ess_bulk: ess_bulk(&series),
                }
            })
            .collect();
        Self {
            parameters,
            divergences: draws.divergences(),
            treedepth_hits: draws.treedepth_hits(max_treedepth),
            max_treedepth,
            accept_per_chain: draws.mean_accept_per_chain(),
        }
    }

    /// Largest defined R̂.
    pub fn max_rhat(&self) -> Option<f64> {
        self.parameters.iter().filter_map(|p| p.rhat).reduce(f64::max)
    }

    /// Parameters whose R̂ is undefined or at least `threshold`.
    pub fn rhat_failures(&self, threshold: f64) -> Vec<&ParameterDiagnostics> {
        self.parameters.iter().filter(|p| p.rhat.is_none_or(|r| r >= threshold)).collect()
    }

    pub fn min_ess_bulk(&self) -> Option<f64> {
        self.parameters.iter().filter_map(|p| p.ess_bulk).reduce(f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn iid(chains: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..chains).map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()).collect()
    }

    fn ar1(chains: usize, n: usize, phi: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sd = (1.0 - phi * phi).sqrt();
        (0..chains)
            .map(|_| {
                let mut x: f64 = StandardNormal.sample(&mut rng);
                (0..n)
                    .map(|_| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        x = phi * x + sd * e;
                        x
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn autocovariance_matches_direct_sum() {
        let x = [1.0, 3.0, -2.0, 0.5, 4.0, -1.0, 2.0];
        let n = x.len();
        let m = x.iter().sum::<f64>() / n as f64;
        let acov = autocovariance(&x);
        for t in 0..n {
            let direct: f64 = (0..n - t).map(|i| (x[i] - m) * (x[i + t] - m)).sum::<f64>() / n as f64;
            assert!((acov[t] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn rhat_near_one_for_iid() {
        let r = split_rhat(&iid(4, 1000, 1)).unwrap();
        assert!((r - 1.0).abs() < 0.01, "{r}");
    }

    #[test]
    fn rhat_detects_separated_chains() {
        let mut chains = iid(2, 1000, 2);
        for v in chains[1].iter_mut() {
            *v += 10.0;
        }
        assert!(split_rhat(&chains).unwrap() > 1.05);
    }

    #[test]
    fn constant_draws_are_undefined() {
        let chains = vec![vec![2.5; 100]; 4];
        assert_eq!(split_rhat(&chains), None);
        assert_eq!(ess_bulk(&chains), None);
        assert_eq!(ess_basic(&chains), None);
    }

    #[test]
    fn ess_of_iid_is_near_total() {
        let e = ess_bulk(&iid(4, 1000, 3)).unwrap();
        assert!((3200.0..=4800.0).contains(&e), "{e}");
    }

    #[test]
    fn ess_of_ar1_matches_theory() {
        let chains = ar1(4, 5000, 0.9, 4);
        let expected = 20000.0 * 0.1 / 1.9;
        let e = ess_bulk(&chains).unwrap();
        assert!(e > expected / 1.5 && e < expected * 1.5, "{e} vs {expected}");
    }

    #[test]
    fn antithetic_ess_exceeds_total_and_is_clamped() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                (0..1000)
                    .map(|i| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        if i % 2 == 0 { 1.0 + 0.1 * e } else { -1.0 + 0.1 * e }
                    })
                    .collect()
            })
            .collect();
        let e = ess_basic(&chains).unwrap();
        let total = 4000.0f64;
        assert!(e > total);
        assert!(e <= total * total.log10());
    }

    #[test]
    fn single_chain_is_split() {
        let chains = iid(1, 1000, 6);
        assert!(split_rhat(&chains).is_some());
        assert!(ess_bulk(&chains).is_some());
    }

    #[test]
    fn mcse_of_iid_mean() {
        let chains = iid(4, 1000, 7);
        let mcse = mcse_mean(&chains).unwrap();
        assert!((mcse - 1.0 / 4000f64.sqrt()).abs() < 0.004, "{mcse}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn affine_invariance(seed in 0u64..1000, a in prop_oneof![-50.0..-0.01f64, 0.01..50.0f64], b in -100.0..100.0f64) {
            let chains = ar1(3, 200, 0.5, seed);
            let mapped: Vec<Vec<f64>> = chains.iter().map(|c| c.iter().map(|x| a * x + b).collect()).collect();
            let (r0, r1) = (split_rhat(&chains).unwrap(), split_rhat(&mapped).unwrap());
            prop_assert!((r0 - r1).abs() < 1e-10, "{r0} vs {r1}");
            let (e0, e1) = (ess_bulk(&chains).unwrap(), ess_bulk(&mapped).unwrap());
            prop_assert!((e0 - e1).abs() < 1e-10 * e0, "{e0} vs {e1}");
        }
    }
}
