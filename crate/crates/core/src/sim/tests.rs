use super::*;
use crate::data::{validate_dataset, GammaSpec};

fn gamma_truth(b: &[f64], n: &[f64]) -> HeterogeneitySpec {
    HeterogeneitySpec::IndependentGamma(GammaSpec::new(b.to_vec(), n.to_vec(), 0.0).unwrap())
}

fn small_design(households: usize) -> SimDesign {
    SimDesign::single_observation(gamma_truth(&[5.0], &[14.0]), households, 30, 3, vec![3, 3], 0.1, 42)
}

#[test]
fn shape_of_a_tiny_design() {
    let d = simulate_dataset(&small_design(3), 0).unwrap();
    assert_eq!(d.households.len(), 3);
    for h in &d.households {
        assert_eq!(h.observations.len(), 1);
        assert!(h.observations[0].y == 0 || h.observations[0].y == 1);
    }
    assert!(validate_dataset(&d).is_empty());
}

#[test]
fn simulation_is_deterministic_per_replicate() {
    let design = small_design(200);
    assert_eq!(simulate_dataset(&design, 1).unwrap(), simulate_dataset(&design, 1).unwrap());
    assert_ne!(simulate_dataset(&design, 1).unwrap(), simulate_dataset(&design, 2).unwrap());
}

#[test]
fn gamma_draws_have_the_prior_mean() {
    let sampler = PriorSampler::new(&gamma_truth(&[5.0], &[14.0])).unwrap();
    let mut rng = replicate_rng(5, 0);
    let n = 100_000;
    let mean = (0..n).map(|_| sampler.sample(&mut rng)[0]).sum::<f64>() / n as f64;
    let se = (5.0f64 * 5.0 * 14.0).sqrt() / (n as f64).sqrt();
    assert!((mean - 70.0).abs() < 3.0 * se, "{mean}");
}

#[test]
fn outcome_rates_follow_the_logit() {
    // x and beta fixed: a point-mass-like gamma makes beta nearly constant
    let mut design = small_design(100_000);
    design.truth = gamma_truth(&[1e-6], &[1e6]);
    design.x_support = vec![2];
    design.scale = Some(0.3);
    let d = simulate_dataset(&design, 0).unwrap();
    let rate = d.households.iter().filter(|h| h.observations[0].y == 1).count() as f64 / 100_000.0;
    let u: f64 = 0.3 * 2.0 * 1.0;
    let p = (-u).exp() / (1.0 + (-u).exp());
    let se = (p * (1.0 - p) / 100_000.0).sqrt();
    assert!((rate - p).abs() < 3.0 * se, "{rate} vs {p}");
}

#[test]
fn default_scale_targets_a_quarter() {
    let design = small_design(20_000);
    let d = simulate_dataset(&design, 0).unwrap();
    let rate = d.households.iter().filter(|h| h.observations[0].y == 1).count() as f64 / 20_000.0;
    assert!((0.05..0.45).contains(&rate), "{rate}");
    assert_eq!(d.units(), vec![design.effective_scale()]);
}

#[test]
fn bonferroni_values_match_the_quoted_ones() {
    assert!((bonferroni_critical(24, 12).unwrap() - 3.167).abs() < 0.01);
    assert!((bonferroni_critical(9, 12).unwrap() - 3.81).abs() < 0.01);
    assert!((bonferroni_critical(24, 1).unwrap() - 2.064).abs() < 0.001);
    assert!((bonferroni_critical(9, 1).unwrap() - 2.262).abs() < 0.001);
}

#[test]
fn single_replicate_has_no_t_statistic() {
    let mut design = small_design(100);
    design.replicates = 1;
    let report = run_study(&design).unwrap();
    assert!(report.params.iter().all(|p| p.t.is_none() && p.sd.is_none() && p.pass.is_none()));
    assert!(!report.all_pass());
    assert!(report.to_csv().starts_with("param,truth,mean,sd,t,crit,pass\n"));
}

#[test]
fn studies_are_deterministic() {
    let design = small_design(150);
    let a = run_study(&design).unwrap();
    let b = run_study(&design).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_eq!(a.replicates.len(), 3);
}

#[test]
fn parity_spread_shrinks_with_budget() {
    let design = small_design(300);
    let rows = parity_study(&design, &[0, 10, 40]).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].max_spread > rows[1].max_spread);
    assert!(rows[1].max_spread > rows[2].max_spread);
}
