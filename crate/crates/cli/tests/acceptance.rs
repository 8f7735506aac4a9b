//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! PHIMI_FULL_TABLES=1 runs the FGM power table at 5000 replicates with
//! B = 10000 bootstrap draws instead of 2000 and 1000.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use phimi::asymptotics::{AsymptoticCovariances, MarginSource};
use phimi::distributions::chisq_cdf;
use phimi::numeric::{ks_one_sample, ks_two_sample};
use phimi::samplers::{sample_fgm, sample_finite, sample_gaussian, stream_rng, FgmSpec, FiniteMixtureSpec, GaussianSpec};
use phimi::study::{run_power_study, PowerStudyConfig, PowerTable, StudyFamily, StudyStatistic, StudyTest};
use phimi::testing::Route;
use phimi::{plugin_estimate, BasisTerm, DivergenceSpec, Family, ObjectiveContext, PairedSample, RatioModel};
use rand::seq::IndexedRandom;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

const GAMMAS: [f64; 5] = [0.0, 1.0, -1.0, 2.0, 0.5];

fn conjugate_identity() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for g in GAMMAS {
        let div = DivergenceSpec::new(g).unwrap();
        for i in 0..50 {
            // log-spaced over [1e-3, 1e3], inside dom φ for every γ
            let x = 10f64.powf(-3.0 + 6.0 * i as f64 / 49.0);
            let t = div.phi_prime(x).unwrap();
            let lhs = div.phi_conj(t).unwrap();
            let rhs = x * t - div.phi(x).unwrap();
            worst = worst.max((lhs - rhs).abs());
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-10 && elapsed < Duration::from_secs(1),
        format!("max |φ*(φ'(x)) - (xφ'(x) - φ(x))| = {worst:.2e}, {elapsed:.2?}"),
    )
}

/// Random contingency table with every row and column observed.
fn random_table<R: Rng>(rng: &mut R) -> PairedSample {
    loop {
        let k1 = rng.random_range(2..=4);
        let k2 = rng.random_range(2..=4);
        let n = rng.random_range(20..=200);
        let w: Vec<f64> = (0..k1 * k2).map(|_| rng.random::<f64>().powi(3)).collect();
        let total: f64 = w.iter().sum();
        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let mut u = rng.random::<f64>() * total;
            let mut cell = 0;
            while cell + 1 < w.len() && u >= w[cell] {
                u -= w[cell];
                cell += 1;
            }
            x.push(format!("a{}", cell / k2));
            y.push(format!("b{}", cell % k2));
        }
        let s = PairedSample::categorical(&x, &y).unwrap();
        if let PairedSample::Categorical { x, y } = &s {
            if x.labels().len() == k1 && y.labels().len() == k2 {
                return s;
            }
        }
    }
}

fn dual_equals_plugin() -> Outcome {
    let start = Instant::now();
    let mut rng = stream_rng(2, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let sample = random_table(&mut rng);
        let model = RatioModel::finite_from_sample(&sample).unwrap();
        let Family::FiniteDiscrete { x_levels, y_levels } = model.family().clone() else {
            unreachable!()
        };
        for div in [DivergenceSpec::KL, DivergenceSpec::CHISQ, DivergenceSpec::HELLINGER] {
            let direct = plugin_estimate(&div, &sample, &x_levels, &y_levels).unwrap();
            let dual = ObjectiveContext::new(div, model.clone(), sample.clone()).unwrap().estimate().i_hat;
            worst = worst.max((dual - direct).abs());
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-6 && elapsed < Duration::from_secs(30),
        format!("max |dual - plug-in| = {worst:.2e} over 50 tables x 3 divergences, {elapsed:.2?}"),
    )
}

fn random_context<R: Rng>(rng: &mut R, case: usize) -> ObjectiveContext {
    let div = DivergenceSpec::new(*GAMMAS.choose(rng).unwrap()).unwrap();
    let n = rng.random_range(20..=80);
    let mut sub = stream_rng(rng.random(), 0);
    let (model, sample) = match case % 4 {
        0 => {
            let rho = rng.random_range(-0.8..0.8);
            let s = sample_gaussian(&GaussianSpec::new(rho, 1.0).unwrap(), n, &mut sub).unwrap();
            (RatioModel::gaussian(), s)
        }
        1 => {
            let names = ["xy", "x2", "y2", "x*y2", "x2*y", "x3*y", "x*y3"];
            let k = rng.random_range(1..=3);
            let terms: Vec<BasisTerm> = names
                .choose_multiple(rng, k)
                .map(|t| BasisTerm::parse(t).unwrap().unwrap())
                .collect();
            let rho = rng.random_range(-0.8..0.8);
            let s = sample_gaussian(&GaussianSpec::new(rho, 1.0).unwrap(), n, &mut sub).unwrap();
            (RatioModel::expbilinear(terms).unwrap(), s)
        }
        2 => {
            let s = random_table(&mut sub);
            (RatioModel::finite_from_sample(&s).unwrap(), s)
        }
        _ => {
            let t = rng.random_range(-1.0..1.0);
            let s = sample_fgm(&FgmSpec::new(t).unwrap(), n, &mut sub).unwrap();
            (RatioModel::copula_fgm(), s)
        }
    };
    ObjectiveContext::new(div, model, sample).unwrap()
}

fn gradient_oracle() -> Outcome {
    let mut rng = stream_rng(3, 0);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let ctx = random_context(&mut rng, case);
        let model = ctx.model();
        let scale = if model.dim() == 1 && model.lower()[0] > -1.0 { 0.9 } else { 0.5 };
        let theta: Vec<f64> = (0..model.dim()).map(|_| rng.random_range(-scale..scale)).collect();
        let theta = model.param(theta).unwrap();
        let grad = ctx.objective_grad(&theta).unwrap();
        let mut fd = vec![0.0; grad.len()];
        for k in 0..grad.len() {
            let mut plus = theta.as_slice().to_vec();
            let mut minus = plus.clone();
            plus[k] += h;
            minus[k] -= h;
            let fp = ctx.objective(&model.param(plus).unwrap()).unwrap();
            let fm = ctx.objective(&model.param(minus).unwrap()).unwrap();
            fd[k] = (fp - fm) / (2.0 * h);
        }
        let diff = grad.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm = grad.iter().map(|a| a * a).sum::<f64>().sqrt();
        worst = worst.max(diff / norm);
    }
    outcome(worst <= 1e-5, format!("max relative error {worst:.2e} over 20 configurations"))
}

fn table2_study() -> PowerTable {
    let family = StudyFamily::Finite { k: 2 };
    let cfg = PowerStudyConfig {
        family,
        grid: vec![0.0, 0.28, 0.48, 0.68],
        n: 30,
        reps: 10_000,
        alpha: 0.01,
        tests: PowerStudyConfig::default_tests(family),
        seed: 4,
    };
    run_power_study(&cfg).unwrap()
}

fn table2(table: &PowerTable, elapsed: Duration) -> Outcome {
    let kl = [0.0123, 0.1681, 0.5690, 0.9415];
    let chisq = [0.0102, 0.1433, 0.5330, 0.9288];
    let mut pass = true;
    let mut cells = Vec::new();
    for (i, &theta) in [0.0, 0.28, 0.48, 0.68].iter().enumerate() {
        let a = table.row("kl", theta).unwrap().power();
        let b = table.row("chisq", theta).unwrap().power();
        pass &= (a - kl[i]).abs() <= 0.02 && (b - chisq[i]).abs() <= 0.02;
        cells.push(format!("θ={theta}: KL {a:.4} (reference {:.4}), χ² {b:.4} (reference {:.4})", kl[i], chisq[i]));
    }
    outcome(pass, format!("{}; {elapsed:.1?}", cells.join("; ")))
}

fn kl_dominance(table: &PowerTable) -> Outcome {
    let mut pass = true;
    let mut cells = Vec::new();
    for theta in [0.28, 0.48, 0.68] {
        let kl = table.row("kl", theta).unwrap();
        let chisq = table.row("chisq", theta).unwrap();
        let margin = kl.power() - (chisq.power() - 2.0 * chisq.se());
        pass &= margin >= 0.0;
        cells.push(format!("θ={theta}: KL {:.4} vs χ² {:.4} ± 2·{:.4}", kl.power(), chisq.power(), chisq.se()));
    }
    outcome(pass, cells.join("; "))
}

fn table3_study() -> (PowerTable, usize, usize) {
    let full = std::env::var("PHIMI_FULL_TABLES").is_ok_and(|v| v == "1");
    let (reps, b_reps) = if full { (5000, 10_000) } else { (2000, 1000) };
    let tests = vec![
        StudyTest::new(StudyStatistic::Dual(DivergenceSpec::KL))
            .with_route(Route::Bootstrap)
            .with_b_reps(b_reps),
        StudyTest::new(StudyStatistic::Dual(DivergenceSpec::CHISQ)).with_b_reps(b_reps),
        StudyTest::new(StudyStatistic::Pearson),
    ];
    let cfg = PowerStudyConfig {
        family: StudyFamily::Fgm,
        grid: vec![0.0, 0.5, 1.0],
        n: 50,
        reps,
        alpha: 0.05,
        tests,
        seed: 5,
    };
    (run_power_study(&cfg).unwrap(), reps, b_reps)
}

fn table3(table: &PowerTable, reps: usize, b_reps: usize) -> Outcome {
    let reference = [0.062, 0.219, 0.691];
    let mut pass = true;
    let mut cells = Vec::new();
    for (i, theta) in [0.0, 0.5, 1.0].into_iter().enumerate() {
        let p = table.row("kl", theta).unwrap().power();
        pass &= (p - reference[i]).abs() <= 0.035;
        cells.push(format!("θ={theta}: KL {p:.4} (reference {:.3})", reference[i]));
    }
    outcome(pass, format!("{}; reps {reps}, B {b_reps}", cells.join("; ")))
}

fn bootstrap_level(table: &PowerTable) -> Outcome {
    let row = table.row("kl", 0.0).unwrap();
    let p = row.power();
    outcome(
        (0.035..=0.075).contains(&p),
        format!("rejection rate {p:.4} over {} runs (reference 0.062)", row.reps),
    )
}

fn gaussian_limit_law() -> Outcome {
    let start = Instant::now();
    let model = RatioModel::gaussian();
    let normal = MarginSource::Normal { sigma: 1.0 };
    let cov = AsymptoticCovariances::under_h0(&model, &normal, &normal, 1_000_000, 6).unwrap();
    let limit = cov.sample_ztz(100_000, 6);
    let n = 500;
    let spec = GaussianSpec::new(0.0, 1.0).unwrap();
    let stats: Vec<f64> = {
        use rayon::prelude::*;
        (0..2000u64)
            .into_par_iter()
            .map(|r| {
                let s = sample_gaussian(&spec, n, &mut stream_rng(7, r)).unwrap();
                let ctx = ObjectiveContext::new(DivergenceSpec::KL, model.clone(), s).unwrap();
                2.0 * n as f64 * ctx.estimate().i_hat
            })
            .collect()
    };
    let d = ks_two_sample(&stats, &limit);
    outcome(
        d <= 0.05,
        format!("KS distance {d:.4} (2000 replicates at n = 500 vs 1e5 draws of ZᵀZ), {:.1?}", start.elapsed()),
    )
}

fn finite_limit_df() -> Outcome {
    let start = Instant::now();
    let spec = FiniteMixtureSpec::new(3, 0.0).unwrap();
    let model = RatioModel::finite_square(3).unwrap();
    let n = 1000;
    let stats: Vec<f64> = {
        use rayon::prelude::*;
        (0..2000u64)
            .into_par_iter()
            .map(|r| {
                let s = sample_finite(&spec, n, &mut stream_rng(8, r)).unwrap();
                let ctx = ObjectiveContext::new(DivergenceSpec::KL, model.clone(), s).unwrap();
                2.0 * n as f64 * ctx.estimate().i_hat
            })
            .collect()
    };
    let d = ks_one_sample(&stats, |t| chisq_cdf(t, 4.0));
    outcome(
        d <= 0.05,
        format!("KS distance {d:.4} to χ²₄ (2000 replicates at n = 1000), {:.1?}", start.elapsed()),
    )
}

fn run_cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_phimi")).args(args).output().expect("binary runs")
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let s = sample_fgm(&FgmSpec::new(0.6).unwrap(), 60, &mut stream_rng(10, 0)).unwrap();
    let (u, v) = s.as_real().unwrap();
    let mut text = String::from("x,y\n");
    for (a, b) in u.iter().zip(v) {
        text.push_str(&format!("{a},{b}\n"));
    }
    std::fs::write(&data, text).unwrap();
    let study = dir.path().join("study.cfg");
    std::fs::write(
        &study,
        "[study]\nfamily = fgm\ngrid = 0, 1\nn = 30\nreps = 200\nalpha = 0.05\n\n[test]\nname = kl\nb_reps = 200\n\n[test]\nname = spearman\n",
    )
    .unwrap();
    let data = data.to_str().unwrap();
    let study = study.to_str().unwrap();
    let commands: Vec<Vec<&str>> = vec![
        vec!["test", "--csv", data, "--model", "fgm", "--route", "bootstrap", "--b-reps", "200", "--seed", "42"],
        vec!["test", "--csv", data, "--route", "ztz", "--seed", "42", "--format", "csv"],
        vec!["bootstrap", "--csv", data, "--model", "expbilinear:xy", "--b-reps", "200", "--seed", "42"],
        vec!["select", "--csv", data, "--candidates", "gaussian;expbilinear:xy;fgm", "--seed", "42"],
        vec!["power", "--config", study, "--seed", "42"],
        vec!["limits", "--seed", "42", "--moment-draws", "100000"],
    ];
    let mut failures = Vec::new();
    for (i, cmd) in commands.iter().enumerate() {
        let outputs: Vec<Vec<u8>> = (0..2)
            .map(|run| {
                let out = dir.path().join(format!("out{i}_{run}"));
                let out = out.to_str().unwrap();
                let mut args = cmd.clone();
                args.extend(["--out", out]);
                let status = run_cli(&args);
                assert!(status.status.success(), "{cmd:?}: {}", String::from_utf8_lossy(&status.stderr));
                std::fs::read(Path::new(out)).unwrap()
            })
            .collect();
        if outputs[0] != outputs[1] || !outputs[0].starts_with(b"phimi-format=1\n") {
            failures.push(cmd[0]);
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{} randomized invocations byte-identical across runs", commands.len())
        } else {
            format!("outputs differ for {failures:?}")
        },
    )
}

fn main() {
    let mut all_pass = true;
    let mut report = |id: usize, name: &str, o: Outcome| {
        all_pass &= o.pass;
        println!("criterion {id:>2} [{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    };
    report(1, "conjugate identity", conjugate_identity());
    report(2, "dual equals plug-in", dual_equals_plugin());
    report(3, "gradient oracle", gradient_oracle());
    let start = Instant::now();
    let t2 = table2_study();
    report(4, "finite mixture power table", table2(&t2, start.elapsed()));
    let (t3, reps, b_reps) = table3_study();
    report(5, "FGM power table", table3(&t3, reps, b_reps));
    report(6, "ZᵀZ limit law", gaussian_limit_law());
    report(7, "finite limit degrees of freedom", finite_limit_df());
    report(8, "bootstrap level under independence", bootstrap_level(&t3));
    report(9, "KL dominance", kl_dominance(&t2));
    report(10, "determinism", determinism());
    if !all_pass {
        std::process::exit(1);
    }
}
