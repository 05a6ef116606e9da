//! Multinomial NUTS with a diagonal metric.
//!
//! The tree is built by recursive doubling in a random direction. Points are
//! selected with multinomial weights `exp(-H)`; the top-level merge is biased
//! toward the new subtree. Termination uses the generalized no-U-turn criterion
//! on the merged trajectory and across each pair of adjacent subtrees.

use rand::Rng;
use rand_distr::StandardNormal;

use super::LogDensity;
use crate::error::{BablrError, Result};
use crate::stats::log_sum_exp;

/// Energy error above which a transition is flagged divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionStats {
    pub divergent: bool,
    pub tree_depth: usize,
    pub n_leapfrog: usize,
    /// Mean Metropolis acceptance probability over every leapfrog state visited.
    pub accept_stat: f64,
    /// Hamiltonian at the selected state.
    pub energy: f64,
    pub step_size: f64,
    pub log_density: f64,
}

#[derive(Debug, Clone)]
struct PhasePoint {
    q: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
}

impl PhasePoint {
    fn kinetic(&self, inv_mass: &[f64]) -> f64 {
        0.5 * self.p.iter().zip(inv_mass).map(|(p, m)| p * p * m).sum::<f64>()
    }

    fn hamiltonian(&self, inv_mass: &[f64]) -> f64 {
        let h = -self.logp + self.kinetic(inv_mass);
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    fn velocity(&self, inv_mass: &[f64], out: &mut [f64]) {
        for ((o, p), m) in out.iter_mut().zip(&self.p).zip(inv_mass) {
            *o = p * m;
        }
    }
}

/// A NUTS kernel bound to a target density, step size and diagonal inverse metric.
pub struct Nuts<'a, T: LogDensity + ?Sized> {
    target: &'a T,
    pub step_size: f64,
    pub inv_mass: Vec<f64>,
    pub max_treedepth: usize,
}

/// Mutable state carried through one trajectory.
struct Trajectory {
    n_leapfrog: usize,
    sum_metro_prob: f64,
    divergent: bool,
    h0: f64,
}

impl<'a, T: LogDensity + ?Sized> Nuts<'a, T> {
    pub fn new(target: &'a T, step_size: f64, inv_mass: Vec<f64>, max_treedepth: usize) -> Self {
        Self { target, step_size, inv_mass, max_treedepth }
    }

    fn leapfrog(&self, z: &mut PhasePoint, eps: f64) {
        let half = 0.5 * eps;
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += half * g;
        }
        for ((q, p), m) in z.q.iter_mut().zip(&z.p).zip(&self.inv_mass) {
            *q += eps * m * p;
        }
        z.logp = self.target.log_density_grad(&z.q, &mut z.grad);
        if !z.logp.is_finite() {
            z.logp = f64::NEG_INFINITY;
            return;
        }
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += half * g;
        }
    }

    fn sample_momentum<R: Rng + ?Sized>(&self, p: &mut [f64], rng: &mut R) {
        for (pi, m) in p.iter_mut().zip(&self.inv_mass) {
            let n: f64 = rng.sample(StandardNormal);
            *pi = n / m.sqrt();
        }
    }

    /// Evaluates the target at `q`. Errors when the density or gradient is not finite.
    pub fn check_start(&self, q: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; q.len()];
        let logp = self.target.log_density_grad(q, &mut grad);
        if !logp.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(BablrError::NonFiniteStart);
        }
        Ok((logp, grad))
    }

    /// One NUTS transition from `q`. Returns the new position and its statistics.
    pub fn transition<R: Rng + ?Sized>(&self, q: &[f64], rng: &mut R) -> Result<(Vec<f64>, TransitionStats)> {
        let (logp, grad) = self.check_start(q)?;
        let dim = q.len();
        let mut z = PhasePoint { q: q.to_vec(), p: vec![0.0; dim], grad, logp };
        self.sample_momentum(&mut z.p, rng);
        let h0 = z.hamiltonian(&self.inv_mass);

        let mut z_fwd = z.clone();
        let mut z_bck = z.clone();
        let mut z_sample = z.clone();
        let mut z_propose = z.clone();

        let mut p_sharp_fwd_fwd = vec![0.0; dim];
        z.velocity(&self.inv_mass, &mut p_sharp_fwd_fwd);
        let mut p_sharp_fwd_bck = p_sharp_fwd_fwd.clone();
        let mut p_sharp_bck_fwd = p_sharp_fwd_fwd.clone();
        let mut p_sharp_bck_bck = p_sharp_fwd_fwd.clone();
        let mut p_fwd_fwd = z.p.clone();
        let mut p_fwd_bck = z.p.clone();
        let mut p_bck_fwd = z.p.clone();
        let mut p_bck_bck = z.p.clone();
        let mut rho = z.p.clone();

        let mut log_sum_weight = 0.0;
        let mut depth = 0;
        let mut traj = Trajectory { n_leapfrog: 0, sum_metro_prob: 0.0, divergent: false, h0 };

        while depth < self.max_treedepth {
            let mut rho_fwd = vec![0.0; dim];
            let mut rho_bck = vec![0.0; dim];
            let mut log_sum_weight_subtree = f64::NEG_INFINITY;

            let valid = if rng.random::<f64>() > 0.5 {
                rho_bck.copy_from_slice(&rho);
                p_bck_fwd.copy_from_slice(&p_fwd_fwd);
                p_sharp_bck_fwd.copy_from_slice(&p_sharp_fwd_fwd);
                let mut cursor = z_fwd.clone();
                let ok = self.build_tree(
                    depth,
                    &mut cursor,
                    &mut z_propose,
                    &mut p_sharp_fwd_bck,
                    &mut p_sharp_fwd_fwd,
                    &mut rho_fwd,
                    &mut p_fwd_bck,
                    &mut p_fwd_fwd,
                    1.0,
                    &mut traj,
                    &mut log_sum_weight_subtree,
                    rng,
                );
                z_fwd = cursor;
                ok
            } else {
                rho_fwd.copy_from_slice(&rho);
                p_fwd_bck.copy_from_slice(&p_bck_bck);
                p_sharp_fwd_bck.copy_from_slice(&p_sharp_bck_bck);
                let mut cursor = z_bck.clone();
                let ok = self.build_tree(
                    depth,
                    &mut cursor,
                    &mut z_propose,
                    &mut p_sharp_bck_fwd,
                    &mut p_sharp_bck_bck,
                    &mut rho_bck,
                    &mut p_bck_fwd,
                    &mut p_bck_bck,
                    -1.0,
                    &mut traj,
                    &mut log_sum_weight_subtree,
                    rng,
                );
                z_bck = cursor;
                ok
            };

            if !valid {
                break;
            }
            depth += 1;

            if log_sum_weight_subtree > log_sum_weight {
                z_sample = z_propose.clone();
            } else {
                let accept = (log_sum_weight_subtree - log_sum_weight).exp();
                if rng.random::<f64>() < accept {
                    z_sample = z_propose.clone();
                }
            }
            log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_subtree);

            for ((r, b), f) in rho.iter_mut().zip(&rho_bck).zip(&rho_fwd) {
                *r = b + f;
            }
            let mut persist = criterion(&p_sharp_bck_bck, &p_sharp_fwd_fwd, &rho);
            let rho_ext: Vec<f64> = rho_bck.iter().zip(&p_fwd_bck).map(|(a, b)| a + b).collect();
            persist &= criterion(&p_sharp_bck_bck, &p_sharp_fwd_bck, &rho_ext);
            let rho_ext: Vec<f64> = rho_fwd.iter().zip(&p_bck_fwd).map(|(a, b)| a + b).collect();
            persist &= criterion(&p_sharp_bck_fwd, &p_sharp_fwd_fwd, &rho_ext);
            if !persist {
                break;
            }
        }

        let accept_stat = if traj.n_leapfrog > 0 {
            traj.sum_metro_prob / traj.n_leapfrog as f64
        } else {
            0.0
        };
        let energy = z_sample.hamiltonian(&self.inv_mass);
        let stats = TransitionStats {
            divergent: traj.divergent,
            tree_depth: depth,
            n_leapfrog: traj.n_leapfrog,
            accept_stat,
            energy,
            step_size: self.step_size,
            log_density: z_sample.logp,
        };
        Ok((z_sample.q, stats))
    }

    #[allow(clippy::too_many_arguments)]
    fn build_tree<R: Rng + ?Sized>(
        &self,
        depth: usize,
        z: &mut PhasePoint,
        z_propose: &mut PhasePoint,
        p_sharp_beg: &mut [f64],
        p_sharp_end: &mut [f64],
        rho: &mut [f64],
        p_beg: &mut [f64],
        p_end: &mut [f64],
        direction: f64,
        traj: &mut Trajectory,
        log_sum_weight: &mut f64,
        rng: &mut R,
    ) -> bool {
        if depth == 0 {
            self.leapfrog(z, direction * self.step_size);
            traj.n_leapfrog += 1;
            let h = z.hamiltonian(&self.inv_mass);
            if h - traj.h0 > DIVERGENCE_THRESHOLD {
                traj.divergent = true;
            }
            let delta = traj.h0 - h;
            *log_sum_weight = log_sum_exp(*log_sum_weight, delta);
            traj.sum_metro_prob += if delta > 0.0 { 1.0 } else { delta.exp() };

            z_propose.clone_from(z);
            z.velocity(&self.inv_mass, p_sharp_beg);
            p_sharp_end.copy_from_slice(p_sharp_beg);
            for (r, p) in rho.iter_mut().zip(&z.p) {
                *r += p;
            }
            p_beg.copy_from_slice(&z.p);
            p_end.copy_from_slice(&z.p);
            return !traj.divergent;
        }

        let dim = z.q.len();

        // Initial subtree.
        let mut log_sum_weight_init = f64::NEG_INFINITY;
        let mut p_init_end = vec![0.0; dim];
        let mut p_sharp_init_end = vec![0.0; dim];
        let mut rho_init = vec![0.0; dim];
        if !self.build_tree(
            depth - 1,
            z,
            z_propose,
            p_sharp_beg,
            &mut p_sharp_init_end,
            &mut rho_init,
            p_beg,
            &mut p_init_end,
            direction,
            traj,
            &mut log_sum_weight_init,
            rng,
        ) {
            return false;
        }

        // Final subtree.
        let mut z_propose_final = z.clone();
        let mut log_sum_weight_final = f64::NEG_INFINITY;
        let mut p_final_beg = vec![0.0; dim];
        let mut p_sharp_final_beg = vec![0.0; dim];
        let mut rho_final = vec![0.0; dim];
        if !self.build_tree(
            depth - 1,
            z,
            &mut z_propose_final,
            &mut p_sharp_final_beg,
            p_sharp_end,
            &mut rho_final,
            &mut p_final_beg,
            p_end,
            direction,
            traj,
            &mut log_sum_weight_final,
            rng,
        ) {
            return false;
        }

        // Multinomial sample from the two subtrees.
        let log_sum_weight_subtree = log_sum_exp(log_sum_weight_init, log_sum_weight_final);
        *log_sum_weight = log_sum_exp(*log_sum_weight, log_sum_weight_subtree);
        if log_sum_weight_final > log_sum_weight_subtree {
            *z_propose = z_propose_final;
        } else {
            let accept = (log_sum_weight_final - log_sum_weight_subtree).exp();
            if rng.random::<f64>() < accept {
                *z_propose = z_propose_final;
            }
        }

        let rho_subtree: Vec<f64> = rho_init.iter().zip(&rho_final).map(|(a, b)| a + b).collect();
        for (r, s) in rho.iter_mut().zip(&rho_subtree) {
            *r += s;
        }

        let mut persist = criterion(p_sharp_beg, p_sharp_end, &rho_subtree);
        let rho_ext: Vec<f64> = rho_init.iter().zip(&p_final_beg).map(|(a, b)| a + b).collect();
        persist &= criterion(p_sharp_beg, &p_sharp_final_beg, &rho_ext);
        let rho_ext: Vec<f64> = rho_final.iter().zip(&p_init_end).map(|(a, b)| a + b).collect();
        persist &= criterion(&p_sharp_init_end, p_sharp_end, &rho_ext);
        persist
    }

    /// Heuristic initial step size: doubles or halves until the one-step
    /// acceptance crosses 0.8.
    pub fn find_reasonable_step_size<R: Rng + ?Sized>(&mut self, q: &[f64], rng: &mut R) -> Result<()> {
        if self.step_size == 0.0 || self.step_size > 1e7 || self.step_size.is_nan() {
            return Ok(());
        }
        let (logp, grad) = self.check_start(q)?;
        let start = PhasePoint { q: q.to_vec(), p: vec![0.0; q.len()], grad, logp };
        let threshold = 0.8f64.ln();
        let mut direction = 0i32;
        loop {
            let mut z = start.clone();
            self.sample_momentum(&mut z.p, rng);
            let h0 = z.hamiltonian(&self.inv_mass);
            self.leapfrog(&mut z, self.step_size);
            let delta = h0 - z.hamiltonian(&self.inv_mass);
            if direction == 0 {
                direction = if delta > threshold { 1 } else { -1 };
            } else if (direction == 1 && !(delta > threshold)) || (direction == -1 && !(delta < threshold)) {
                break;
            }
            if direction == 1 {
                self.step_size *= 2.0;
            } else {
                self.step_size *= 0.5;
            }
            if self.step_size > 1e7 {
                return Err(BablrError::InvalidSampler("step size diverged to infinity during search".into()));
            }
            if self.step_size < 1e-300 {
                return Err(BablrError::InvalidSampler("step size collapsed to zero during search".into()));
            }
        }
        Ok(())
    }
}

#[inline]
fn criterion(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One NUTS transition of `target` from `position`.
pub fn nuts_transition<T: LogDensity + ?Sized, R: Rng + ?Sized>(
    target: &T,
    position: &[f64],
    step_size: f64,
    inv_mass: &[f64],
    max_treedepth: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, TransitionStats)> {
    if !(step_size > 0.0) {
        return Err(BablrError::InvalidSampler(format!("step size must be positive, got {step_size}")));
    }
    if inv_mass.len() != position.len() || inv_mass.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
        return Err(BablrError::InvalidSampler("inverse mass must be positive and match the dimension".into()));
    }
    Nuts::new(target, step_size, inv_mass.to_vec(), max_treedepth).transition(position, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Gauss {
        sd: Vec<f64>,
    }

    impl LogDensity for Gauss {
        fn dim(&self) -> usize {
            self.sd.len()
        }

        fn log_density_grad(&self, x: &[f64], g: &mut [f64]) -> f64 {
            let mut lp = 0.0;
            for i in 0..x.len() {
                let v = self.sd[i] * self.sd[i];
                lp -= 0.5 * x[i] * x[i] / v;
                g[i] = -x[i] / v;
            }
            lp
        }
    }

    #[test]
    fn depth_zero_returns_initial_point() {
        let target = Gauss { sd: vec![1.0, 2.0] };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (q, stats) = nuts_transition(&target, &[0.3, -0.7], 0.5, &[1.0, 1.0], 0, &mut rng).unwrap();
        assert_eq!(q, vec![0.3, -0.7]);
        assert_eq!(stats.tree_depth, 0);
        assert_eq!(stats.n_leapfrog, 0);
    }

    #[test]
    fn non_finite_start_is_an_error() {
        struct Bad;
        impl LogDensity for Bad {
            fn dim(&self) -> usize {
                1
            }
            fn log_density_grad(&self, _: &[f64], g: &mut [f64]) -> f64 {
                g[0] = 0.0;
                f64::NEG_INFINITY
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            nuts_transition(&Bad, &[0.0], 0.1, &[1.0], 5, &mut rng),
            Err(BablrError::NonFiniteStart)
        ));
    }

    #[test]
    fn rejects_bad_step_size_and_metric() {
        let target = Gauss { sd: vec![1.0] };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(nuts_transition(&target, &[0.0], 0.0, &[1.0], 5, &mut rng).is_err());
        assert!(nuts_transition(&target, &[0.0], 0.1, &[-1.0], 5, &mut rng).is_err());
    }

    #[test]
    fn huge_step_is_divergent_and_stays_put() {
        struct Steep;
        impl LogDensity for Steep {
            fn dim(&self) -> usize {
                1
            }
            fn log_density_grad(&self, x: &[f64], g: &mut [f64]) -> f64 {
                g[0] = -4.0 * x[0].powi(3);
                -x[0].powi(4)
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (q, stats) = nuts_transition(&Steep, &[1.0], 50.0, &[1.0], 10, &mut rng).unwrap();
        assert!(stats.divergent);
        assert_eq!(q, vec![1.0]);
    }

    #[test]
    fn fixed_step_recovers_standard_normal_moments() {
        let target = Gauss { sd: vec![1.0] };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut q = vec![0.0];
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let n = 20_000;
        for _ in 0..n {
            let (next, _) = nuts_transition(&target, &q, 0.9, &[1.0], 10, &mut rng).unwrap();
            q = next;
            sum += q[0];
            sum_sq += q[0] * q[0];
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var - 1.0).abs() < 0.06, "var {var}");
    }
}
