//! Independence tests based on S_n = 2n·Î_φ, and the classical correlation
//! baselines.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::asymptotics::{chisq_df_finite, limit_quantile_ztz, AsymptoticCovariances, MarginSource};
use crate::distributions::{chisq_critical, chisq_sf, normal_critical, normal_two_sided, student_t_critical, student_t_two_sided};
use crate::error::{Error, Result};
use crate::estimator::{DualEstimate, ObjectiveContext};
use crate::models::{mid_ranks, Family, Link, RatioModel};
use crate::numeric::upper_quantile;
use crate::sample::PairedSample;
use crate::samplers::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Route {
    /// Monte-Carlo quantile of the ZᵀZ limit law (KL, exponential models).
    ZtZ,
    /// χ² with (K₁ − 1)(K₂ − 1) degrees of freedom (finite-discrete model).
    ChiSqExact,
    /// Resampling from the product of the empirical margins.
    Bootstrap,
    /// Student t_{n−2} reference law (Pearson, Spearman).
    StudentT,
    /// Standard normal reference law (Kendall).
    NormalApprox,
}

impl Route {
    pub fn name(&self) -> &'static str {
        match self {
            Route::ZtZ => "ztz",
            Route::ChiSqExact => "chisq-exact",
            Route::Bootstrap => "bootstrap",
            Route::StudentT => "student-t",
            Route::NormalApprox => "normal",
        }
    }
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Route {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ztz" | "asymptotic" => Ok(Route::ZtZ),
            "chisq-exact" | "chisq" | "chi2" => Ok(Route::ChiSqExact),
            "bootstrap" => Ok(Route::Bootstrap),
            "student-t" => Ok(Route::StudentT),
            "normal" => Ok(Route::NormalApprox),
            other => Err(Error::Config(format!("unknown calibration route `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub critical_value: f64,
    pub p_value: Option<f64>,
    pub reject: bool,
    pub route: Route,
    pub alpha: f64,
}

impl TestResult {
    fn new(statistic: f64, critical_value: f64, p_value: Option<f64>, route: Route, alpha: f64) -> Self {
        Self {
            statistic,
            critical_value,
            p_value,
            reject: statistic > critical_value,
            route,
            alpha,
        }
    }
}

/// Result of an S_n-based test together with the fit it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct DualTest {
    pub result: TestResult,
    pub estimate: DualEstimate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapConfig {
    pub b_reps: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl BootstrapConfig {
    pub const DEFAULT_REPS: usize = 1000;
    pub const MIN_REPS: usize = 100;
    /// Largest tolerated share of non-converged replicate fits.
    pub const MAX_FAILED_SHARE: f64 = 0.05;

    pub fn new(b_reps: usize, alpha: f64, seed: u64) -> Result<Self> {
        if b_reps < Self::MIN_REPS {
            return Err(Error::InvalidInput(format!(
                "bootstrap needs at least {} replicates, got {b_reps}",
                Self::MIN_REPS
            )));
        }
        check_alpha(alpha)?;
        Ok(Self { b_reps, alpha, seed })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapOutcome {
    pub critical_value: f64,
    /// S*_n for each replicate, in replicate order.
    pub replicates: Vec<f64>,
    pub nonconverged: usize,
}

impl BootstrapOutcome {
    /// (1 + #{S* ≥ s}) / (B + 1)
    pub fn p_value(&self, s: f64) -> f64 {
        let exceed = self.replicates.iter().filter(|&&v| v >= s).count();
        (1 + exceed) as f64 / (self.replicates.len() + 1) as f64
    }
}

/// Settings of the ZᵀZ route.
#[derive(Debug, Clone, PartialEq)]
pub struct ZtzConfig {
    /// Margins for Σ₁, Σ₂; `None` uses the empirical margins of the sample.
    pub margins: Option<(MarginSource, MarginSource)>,
    /// Monte-Carlo draws per margin for continuous reference margins.
    pub moment_draws: usize,
    /// Draws of ZᵀZ for the quantile.
    pub n_draws: usize,
    pub seed: u64,
}

impl ZtzConfig {
    pub const DEFAULT_DRAWS: usize = 10_000;
    pub const DEFAULT_MOMENT_DRAWS: usize = 1_000_000;

    pub fn empirical(seed: u64) -> Self {
        Self {
            margins: None,
            moment_draws: Self::DEFAULT_MOMENT_DRAWS,
            n_draws: Self::DEFAULT_DRAWS,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Calibration {
    ZtZ(ZtzConfig),
    ChiSqExact,
    Bootstrap(BootstrapConfig),
}

impl Calibration {
    pub fn route(&self) -> Route {
        match self {
            Calibration::ZtZ(_) => Route::ZtZ,
            Calibration::ChiSqExact => Route::ChiSqExact,
            Calibration::Bootstrap(_) => Route::Bootstrap,
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("level {alpha} must lie in (0, 1)")));
    }
    Ok(())
}

/// Checks that `route` is available for this divergence and model.
pub fn check_route(route: Route, gamma: f64, model: &RatioModel) -> Result<()> {
    match route {
        Route::ZtZ => {
            if gamma != 1.0 || model.link() != Link::Exp {
                return Err(Error::RouteMismatch(
                    "the ZtZ route needs the KL divergence and an exponential model".into(),
                ));
            }
        }
        Route::ChiSqExact => {
            if !matches!(model.family(), Family::FiniteDiscrete { .. }) {
                return Err(Error::RouteMismatch("the exact chi-square route needs the finite model".into()));
            }
        }
        Route::Bootstrap => {}
        Route::StudentT | Route::NormalApprox => {
            return Err(Error::RouteMismatch(format!("`{route}` calibrates correlation baselines only")));
        }
    }
    Ok(())
}

/// Degrees of freedom and upper-α critical value of the exact χ² route.
pub fn chisq_exact_critical(model: &RatioModel, alpha: f64) -> Result<(usize, f64)> {
    check_alpha(alpha)?;
    let Family::FiniteDiscrete { x_levels, y_levels } = model.family() else {
        return Err(Error::RouteMismatch("the exact chi-square route needs the finite model".into()));
    };
    let df = chisq_df_finite(x_levels.len(), y_levels.len())?;
    Ok((df, chisq_critical(alpha, df as f64)))
}

/// Limit-law covariances for the ZᵀZ route on `sample`.
pub fn ztz_covariances(model: &RatioModel, sample: &PairedSample, cfg: &ZtzConfig) -> Result<AsymptoticCovariances> {
    let (mx, my) = match &cfg.margins {
        Some(m) => m.clone(),
        None => empirical_margins(sample),
    };
    AsymptoticCovariances::under_h0(model, &mx, &my, cfg.moment_draws, cfg.seed)
}

/// The two observed margins as moment sources.
pub fn empirical_margins(sample: &PairedSample) -> (MarginSource, MarginSource) {
    match sample {
        PairedSample::Real { x, y } => (MarginSource::Empirical(x.clone()), MarginSource::Empirical(y.clone())),
        PairedSample::Categorical { .. } => {
            let n = sample.len();
            let tok = |v: crate::sample::Value<'_>| match v {
                crate::sample::Value::Token(t) => t.to_string(),
                crate::sample::Value::Real(r) => r.to_string(),
            };
            (
                MarginSource::Categorical((0..n).map(|i| tok(sample.x(i))).collect()),
                MarginSource::Categorical((0..n).map(|i| tok(sample.y(i))).collect()),
            )
        }
    }
}

/// Upper-α quantile of ZᵀZ for the ZᵀZ route.
pub fn ztz_critical(model: &RatioModel, sample: &PairedSample, cfg: &ZtzConfig, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let cov = ztz_covariances(model, sample, cfg)?;
    Ok(limit_quantile_ztz(&cov, alpha, cfg.n_draws, cfg.seed))
}

/// S*_n on B samples drawn from P̂₁ ⊗ P̂₂ and their (1 − α) quantile.
///
/// Replicate r uses RNG stream r of `cfg.seed`; ranks (for the copula model)
/// are recomputed on each replicate.
pub fn bootstrap_critical(ctx: &ObjectiveContext, cfg: &BootstrapConfig) -> Result<BootstrapOutcome> {
    BootstrapConfig::new(cfg.b_reps, cfg.alpha, cfg.seed)?;
    let n = ctx.n() as f64;
    let fits: Vec<Result<(f64, bool)>> = (0..cfg.b_reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(cfg.seed, r as u64);
            let resampled = ctx.sample().resample_product(&mut rng);
            let est = ctx.with_sample(resampled)?.estimate();
            Ok((2.0 * n * est.i_hat, est.converged))
        })
        .collect();
    let mut replicates = Vec::with_capacity(cfg.b_reps);
    let mut nonconverged = 0;
    for fit in fits {
        let (s, ok) = fit?;
        replicates.push(s);
        nonconverged += usize::from(!ok);
    }
    if nonconverged as f64 > BootstrapConfig::MAX_FAILED_SHARE * cfg.b_reps as f64 {
        return Err(Error::OptimFailure {
            failed: nonconverged,
            total: cfg.b_reps,
        });
    }
    Ok(BootstrapOutcome {
        critical_value: upper_quantile(&replicates, cfg.alpha),
        replicates,
        nonconverged,
    })
}

/// Fits the dual estimate and calibrates S_n = 2nÎ_φ by the chosen route.
pub fn test_independence(ctx: &ObjectiveContext, calibration: &Calibration, alpha: f64) -> Result<DualTest> {
    check_alpha(alpha)?;
    check_route(calibration.route(), ctx.divergence().gamma(), ctx.model())?;
    let estimate = ctx.estimate();
    let statistic = 2.0 * ctx.n() as f64 * estimate.i_hat;
    let result = match calibration {
        Calibration::ChiSqExact => {
            let (df, critical) = chisq_exact_critical(ctx.model(), alpha)?;
            TestResult::new(statistic, critical, Some(chisq_sf(statistic, df as f64)), Route::ChiSqExact, alpha)
        }
        Calibration::ZtZ(cfg) => {
            let critical = ztz_critical(ctx.model(), ctx.sample(), cfg, alpha)?;
            TestResult::new(statistic, critical, None, Route::ZtZ, alpha)
        }
        Calibration::Bootstrap(cfg) => {
            let cfg = BootstrapConfig { alpha, ..cfg.clone() };
            let boot = bootstrap_critical(ctx, &cfg)?;
            TestResult::new(statistic, boot.critical_value, Some(boot.p_value(statistic)), Route::Bootstrap, alpha)
        }
    };
    Ok(DualTest { result, estimate })
}

/// Decision against a critical value computed elsewhere (e.g. once per study).
pub fn decide(statistic: f64, critical_value: f64, route: Route, alpha: f64) -> TestResult {
    TestResult::new(statistic, critical_value, None, route, alpha)
}

fn real_columns(sample: &PairedSample) -> Result<(&[f64], &[f64])> {
    let (x, y) = sample
        .as_real()
        .ok_or_else(|| Error::Support("correlation tests need real-valued observations".into()))?;
    if x.len() < 4 {
        return Err(Error::InvalidInput(format!("need n >= 4, got {}", x.len())));
    }
    Ok((x, y))
}

fn correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateInput("zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

fn t_test_of_correlation(r: f64, n: usize, alpha: f64) -> TestResult {
    let df = (n - 2) as f64;
    let t = if r.abs() >= 1.0 {
        f64::INFINITY
    } else {
        r * df.sqrt() / (1.0 - r * r).sqrt()
    };
    let p = if t.is_infinite() { 0.0 } else { student_t_two_sided(t, df) };
    TestResult::new(t.abs(), student_t_critical(alpha, df), Some(p), Route::StudentT, alpha)
}

/// Pearson correlation test, two-sided against Student t_{n−2}.
pub fn pearson_test(sample: &PairedSample, alpha: f64) -> Result<TestResult> {
    check_alpha(alpha)?;
    let (x, y) = real_columns(sample)?;
    Ok(t_test_of_correlation(correlation(x, y)?, x.len(), alpha))
}

/// Spearman rank correlation (Pearson on mid-ranks), same reference law.
pub fn spearman_test(sample: &PairedSample, alpha: f64) -> Result<TestResult> {
    check_alpha(alpha)?;
    let (x, y) = real_columns(sample)?;
    let r = correlation(&mid_ranks(x), &mid_ranks(y))?;
    Ok(t_test_of_correlation(r, x.len(), alpha))
}

/// Kendall τ_b by merge-sort discordance counting, O(n log n).
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));
    let pairs = |run: u64| run * run.saturating_sub(1) / 2;

    // pairs tied on x, and tied on both
    let (mut tied_x, mut tied_xy) = (0u64, 0u64);
    let (mut run_x, mut run_xy) = (1u64, 1u64);
    for w in idx.windows(2) {
        if x[w[0]] == x[w[1]] {
            run_x += 1;
            if y[w[0]] == y[w[1]] {
                run_xy += 1;
            } else {
                tied_xy += pairs(run_xy);
                run_xy = 1;
            }
        } else {
            tied_x += pairs(run_x);
            tied_xy += pairs(run_xy);
            run_x = 1;
            run_xy = 1;
        }
    }
    tied_x += pairs(run_x);
    tied_xy += pairs(run_xy);

    // sort by y counting exchanges: each is a discordant pair
    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let mut buf = ys.clone();
    let swaps = merge_count(&mut ys, &mut buf);

    let mut tied_y = 0u64;
    let mut run_y = 1u64;
    for w in ys.windows(2) {
        if w[0] == w[1] {
            run_y += 1;
        } else {
            tied_y += pairs(run_y);
            run_y = 1;
        }
    }
    tied_y += pairs(run_y);

    let total = pairs(n as u64);
    let denom = ((total - tied_x) as f64 * (total - tied_y) as f64).sqrt();
    if denom == 0.0 {
        return Err(Error::DegenerateInput("zero variance".into()));
    }
    let concordant_minus_discordant =
        total as f64 - tied_x as f64 - tied_y as f64 + tied_xy as f64 - 2.0 * swaps as f64;
    Ok(concordant_minus_discordant / denom)
}

fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = {
        let (left, right) = v.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        merge_count(left, bl) + merge_count(right, br)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Kendall test with z = 3τ√(n(n−1)) / √(2(2n+5)), two-sided normal.
pub fn kendall_test(sample: &PairedSample, alpha: f64) -> Result<TestResult> {
    check_alpha(alpha)?;
    let (x, y) = real_columns(sample)?;
    let tau = kendall_tau_b(x, y)?;
    let n = x.len() as f64;
    let z = 3.0 * tau * (n * (n - 1.0)).sqrt() / (2.0 * (2.0 * n + 5.0)).sqrt();
    Ok(TestResult::new(z.abs(), normal_critical(alpha), Some(normal_two_sided(z)), Route::NormalApprox, alpha))
}
