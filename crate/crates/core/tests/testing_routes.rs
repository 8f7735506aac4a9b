use phimi::samplers::{sample_finite, sample_gaussian, stream_rng, FiniteMixtureSpec, GaussianSpec};
use phimi::testing::{bootstrap_critical, kendall_test, pearson_test, spearman_test, BootstrapConfig, TestResult};
use phimi::{DivergenceSpec, ObjectiveContext, PairedSample, RatioModel, Result};

#[test]
fn two_by_two_bootstrap_quantile_matches_chisq1() {
    let sample = sample_finite(&FiniteMixtureSpec::new(2, 0.0).unwrap(), 200, &mut stream_rng(11, 0)).unwrap();
    let ctx = ObjectiveContext::new(DivergenceSpec::KL, RatioModel::finite_square(2).unwrap(), sample).unwrap();
    let cfg = BootstrapConfig::new(2000, 0.01, 12).unwrap();
    let out = bootstrap_critical(&ctx, &cfg).unwrap();
    assert_eq!(out.replicates.len(), 2000);
    // χ²₁ upper 1% point
    assert!((out.critical_value - 6.635).abs() <= 1.0, "{}", out.critical_value);
}

#[test]
fn bootstrap_p_value_counts_exceedances() {
    let sample = sample_gaussian(&GaussianSpec::new(0.0, 1.0).unwrap(), 40, &mut stream_rng(13, 0)).unwrap();
    let ctx = ObjectiveContext::new(DivergenceSpec::KL, RatioModel::gaussian(), sample).unwrap();
    let out = bootstrap_critical(&ctx, &BootstrapConfig::new(200, 0.05, 14).unwrap()).unwrap();
    assert_eq!(out.p_value(f64::INFINITY), 1.0 / 201.0);
    assert_eq!(out.p_value(f64::NEG_INFINITY), 1.0);
    assert!(BootstrapConfig::new(99, 0.05, 0).is_err());
}

fn null_rejection_rate(test: fn(&PairedSample, f64) -> Result<TestResult>, seed: u64) -> f64 {
    let reps = 10_000;
    let spec = GaussianSpec::new(0.0, 1.0).unwrap();
    let hits = (0..reps)
        .filter(|&r| {
            let s = sample_gaussian(&spec, 30, &mut stream_rng(seed, r)).unwrap();
            test(&s, 0.05).unwrap().reject
        })
        .count();
    hits as f64 / reps as f64
}

#[test]
fn baseline_tests_hold_level_under_independence() {
    let se = (0.05f64 * 0.95 / 10_000.0).sqrt();
    for (name, test) in [
        ("pearson", pearson_test as fn(&PairedSample, f64) -> Result<TestResult>),
        ("spearman", spearman_test),
        ("kendall", kendall_test),
    ] {
        let rate = null_rejection_rate(test, 21);
        assert!((rate - 0.05).abs() <= 3.0 * se, "{name}: {rate}");
    }
}
