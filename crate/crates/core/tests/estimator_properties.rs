use phimi::optim::{maximize_box, OptimOptions};
use phimi::samplers::{sample_fgm, sample_gaussian, stream_rng, FgmSpec, GaussianSpec};
use phimi::{BasisTerm, DivergenceSpec, ObjectiveContext, PairedSample, RatioModel};
use proptest::prelude::*;
use rand::Rng;

fn gaussian_sample(rho: f64, n: usize, seed: u64) -> PairedSample {
    sample_gaussian(&GaussianSpec::new(rho, 1.0).unwrap(), n, &mut stream_rng(seed, 0)).unwrap()
}

fn terms(names: &[&str]) -> Vec<BasisTerm> {
    names.iter().map(|t| BasisTerm::parse(t).unwrap().unwrap()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn gradient_matches_central_differences(
        seed in 0u64..1000,
        rho in -0.8f64..0.8,
        gamma_idx in 0usize..5,
        raw in prop::collection::vec(-0.4f64..0.4, 4),
    ) {
        let gamma = [0.0, 1.0, -1.0, 2.0, 0.5][gamma_idx];
        let ctx = ObjectiveContext::new(
            DivergenceSpec::new(gamma).unwrap(),
            RatioModel::gaussian(),
            gaussian_sample(rho, 40, seed),
        )
        .unwrap();
        let model = ctx.model();
        let theta = model.param(raw.clone()).unwrap();
        let grad = ctx.objective_grad(&theta).unwrap();
        let h = 1e-5;
        for k in 0..raw.len() {
            let mut plus = raw.clone();
            let mut minus = raw.clone();
            plus[k] += h;
            minus[k] -= h;
            let fd = (ctx.objective(&model.param(plus).unwrap()).unwrap()
                - ctx.objective(&model.param(minus).unwrap()).unwrap())
                / (2.0 * h);
            prop_assert!((fd - grad[k]).abs() <= 1e-6 * (1.0 + grad[k].abs()), "k={} fd={} analytic={}", k, fd, grad[k]);
        }
    }

    #[test]
    fn double_sum_depends_on_margins_only(seed in 0u64..1000, beta in -1.0f64..1.0) {
        let sample = gaussian_sample(0.5, 30, seed);
        let (x, y) = sample.as_real().unwrap();
        let mut rng = stream_rng(seed, 1);
        let mut perm: Vec<usize> = (0..y.len()).collect();
        for i in (1..perm.len()).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let shuffled = PairedSample::real(x.to_vec(), perm.iter().map(|&i| y[i]).collect()).unwrap();
        let model = RatioModel::expbilinear(terms(&["xy"])).unwrap();
        let theta = model.param(vec![0.1, beta]).unwrap();
        let a = ObjectiveContext::new(DivergenceSpec::KL, model.clone(), sample).unwrap();
        let b = ObjectiveContext::new(DivergenceSpec::KL, model, shuffled).unwrap();
        // M_n = (1/n)Σf − (1/n²)ΣΣg; only the first term sees the pairing
        let first = |ctx: &ObjectiveContext| -> f64 {
            let s = ctx.sample();
            (0..s.len())
                .map(|i| {
                    let h = ctx.model().h_eval(&theta, s.x(i), s.y(i)).unwrap();
                    DivergenceSpec::KL.phi_prime(h).unwrap()
                })
                .sum::<f64>()
                / s.len() as f64
        };
        let da = first(&a) - a.objective(&theta).unwrap();
        let db = first(&b) - b.objective(&theta).unwrap();
        prop_assert!((da - db).abs() <= 1e-12 * (1.0 + da.abs()));
    }

    #[test]
    fn kl_objective_is_concave_on_segments(seed in 0u64..1000, a in prop::collection::vec(-0.5f64..0.5, 4), b in prop::collection::vec(-0.5f64..0.5, 4)) {
        let ctx = ObjectiveContext::new(DivergenceSpec::KL, RatioModel::gaussian(), gaussian_sample(0.3, 30, seed)).unwrap();
        let model = ctx.model();
        let mid: Vec<f64> = a.iter().zip(&b).map(|(u, v)| 0.5 * (u + v)).collect();
        let m = |t: Vec<f64>| ctx.objective(&model.param(t).unwrap()).unwrap();
        let (fa, fb, fm) = (m(a), m(b), m(mid));
        prop_assert!(fm >= 0.5 * (fa + fb) - 1e-12 * (1.0 + fa.abs() + fb.abs()));
    }
}

#[test]
fn objective_vanishes_at_theta0() {
    let sample = gaussian_sample(0.7, 50, 1);
    for gamma in [0.0, 1.0, -1.0, 2.0, 0.5, 1.5] {
        let ctx = ObjectiveContext::new(DivergenceSpec::new(gamma).unwrap(), RatioModel::gaussian(), sample.clone()).unwrap();
        assert_eq!(ctx.objective(&ctx.model().zero()).unwrap(), 0.0);
        assert!(ctx.estimate().i_hat >= -1e-8);
    }
}

#[test]
fn multistart_agrees_with_estimate_for_kl() {
    let ctx = ObjectiveContext::new(
        DivergenceSpec::KL,
        RatioModel::expbilinear(terms(&["xy", "x2", "y2", "x*y2"])).unwrap(),
        gaussian_sample(0.5, 120, 2),
    )
    .unwrap();
    let est = ctx.estimate();
    assert!(est.converged);
    let model = ctx.model();
    let f = |t: &[f64]| {
        let p = model.param(t.to_vec()).ok()?;
        Some((ctx.objective(&p).ok()?, ctx.objective_grad(&p).ok()?))
    };
    let mut rng = stream_rng(3, 0);
    for _ in 0..5 {
        let start: Vec<f64> = (0..model.dim()).map(|_| rng.random_range(-0.5..0.5)).collect();
        let run = maximize_box(&f, &start, model.lower(), model.upper(), &OptimOptions::default()).unwrap();
        assert!((run.value - est.i_hat).abs() <= 1e-6, "{} vs {}", run.value, est.i_hat);
    }
}

#[test]
fn consistency_under_independence() {
    let small = ObjectiveContext::new(DivergenceSpec::KL, RatioModel::gaussian(), gaussian_sample(0.0, 100, 4))
        .unwrap()
        .estimate();
    let large = ObjectiveContext::new(DivergenceSpec::KL, RatioModel::gaussian(), gaussian_sample(0.0, 2000, 4))
        .unwrap()
        .estimate();
    // 2nÎ is O_p(1) under independence
    assert!(large.i_hat < 0.01, "{}", large.i_hat);
    assert!(large.theta_hat.as_slice().iter().all(|t| t.abs() < 0.15), "{:?}", large.theta_hat);
    assert!(small.i_hat >= 0.0);
}

#[test]
fn gaussian_kl_recovers_mutual_information() {
    // KL mutual information of a bivariate normal is −½ log(1 − ρ²)
    let rho: f64 = 0.6;
    let est = ObjectiveContext::new(DivergenceSpec::KL, RatioModel::gaussian(), gaussian_sample(rho, 3000, 5))
        .unwrap()
        .estimate();
    let truth = -0.5 * (1.0 - rho * rho).ln();
    assert!((est.i_hat - truth).abs() < 0.03, "{} vs {truth}", est.i_hat);
}

#[test]
fn fgm_estimate_tracks_dependence() {
    let est = |theta: f64| {
        let s = sample_fgm(&FgmSpec::new(theta).unwrap(), 400, &mut stream_rng(6, 0)).unwrap();
        ObjectiveContext::new(DivergenceSpec::KL, RatioModel::copula_fgm(), s).unwrap().estimate()
    };
    let strong = est(1.0);
    let none = est(0.0);
    assert!(strong.converged && none.converged);
    assert!(strong.theta_hat.as_slice()[0] > 0.5, "{:?}", strong.theta_hat);
    assert!(strong.i_hat > none.i_hat);
}
