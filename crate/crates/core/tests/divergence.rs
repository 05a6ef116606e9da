//! Raising the acceptance target shrinks the step size, which should not add divergences.

use std::sync::Arc;

use bablr::simgen::{simulate_dataset, SimDesign, TruthInputs};
use bablr::{run_chains, BablrTarget, Parameterization, PriorConfig, SamplerConfig};

#[test]
fn higher_target_accept_does_not_increase_divergences() {
    let (data, _) = simulate_dataset(&TruthInputs::simulation1(), &SimDesign::centered(12, 21)).unwrap();
    let mut prior = PriorConfig::simulation();
    prior.parameterization = Parameterization::Centered;
    let target = BablrTarget::new(Arc::new(data), prior).unwrap();
    let run = |target_accept: f64, seed: u64| {
        let config = SamplerConfig { warmup: 200, samples: 200, target_accept, seed, ..SamplerConfig::default() };
        run_chains(&target, &config).unwrap().divergences()
    };
    for seed in [1, 2] {
        let low = run(0.8, seed);
        let high = run(0.99, seed);
        println!("seed {seed}: {low} divergences at 0.8, {high} at 0.99");
        assert!(high <= low, "seed {seed}: {high} > {low}");
    }
}
