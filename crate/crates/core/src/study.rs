//! Monte-Carlo power studies for the simulation families.
//!
//! Each grid value gets `reps` samples; replicate r at grid index g draws from
//! stream (g << 32) | r of the study seed, so tables are reproducible whatever
//! the thread count. All tests see the same samples. Critical values are fixed
//! once per study: exact χ² and ZᵀZ from their limit laws, the bootstrap route
//! from one pilot sample drawn under independence.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rayon::prelude::*;

use crate::asymptotics::{limit_quantile_ztz, AsymptoticCovariances, MarginSource};
use crate::config::{ConfigDoc, Section};
use crate::divergence::DivergenceSpec;
use crate::error::{Error, Result};
use crate::estimator::ObjectiveContext;
use crate::models::{parse_floats, Link, ModelSpec, RatioModel};
use crate::sample::PairedSample;
use crate::samplers::{
    sample_fgm, sample_finite, sample_gaussian, stream_rng, FgmSpec, FiniteMixtureSpec, GaussianSpec,
};
use crate::testing::{
    bootstrap_critical, check_route, chisq_exact_critical, kendall_test, pearson_test, spearman_test, BootstrapConfig,
    Route, ZtzConfig,
};

pub const FORMAT_HEADER: &str = "phimi-format=1";
const CSV_COLUMNS: &str = "test,param,power,se,reps,n,alpha";
const CURVE_COLUMNS: &str = "test,param,power,lower,upper";

/// Sampler of a study; the grid parameter is θ (finite, FGM) or ρ (Gaussian).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StudyFamily {
    Finite { k: usize },
    Gaussian { sigma: f64 },
    Fgm,
}

impl StudyFamily {
    pub fn name(&self) -> &'static str {
        match self {
            StudyFamily::Finite { .. } => "finite",
            StudyFamily::Gaussian { .. } => "gaussian",
            StudyFamily::Fgm => "fgm",
        }
    }

    pub fn check_param(&self, param: f64) -> Result<()> {
        match *self {
            StudyFamily::Finite { k } => FiniteMixtureSpec::new(k, param).map(drop),
            StudyFamily::Gaussian { sigma } => GaussianSpec::new(param, sigma).map(drop),
            StudyFamily::Fgm => FgmSpec::new(param).map(drop),
        }
    }

    /// One sample of size n at grid value `param`.
    pub fn draw<R: rand::Rng + ?Sized>(&self, param: f64, n: usize, rng: &mut R) -> Result<PairedSample> {
        match *self {
            StudyFamily::Finite { k } => sample_finite(&FiniteMixtureSpec::new(k, param)?, n, rng),
            StudyFamily::Gaussian { sigma } => sample_gaussian(&GaussianSpec::new(param, sigma)?, n, rng),
            StudyFamily::Fgm => sample_fgm(&FgmSpec::new(param)?, n, rng),
        }
    }

    /// Ratio model used by the dual tests unless a test names its own.
    pub fn default_model(&self) -> Result<RatioModel> {
        match *self {
            StudyFamily::Finite { k } => RatioModel::finite_square(k),
            StudyFamily::Gaussian { .. } => Ok(RatioModel::gaussian()),
            StudyFamily::Fgm => Ok(RatioModel::copula_fgm()),
        }
    }

    /// Known margins of the family, for the ZᵀZ route.
    pub fn margins(&self) -> (MarginSource, MarginSource) {
        match *self {
            StudyFamily::Finite { k } => {
                let levels = MarginSource::Levels {
                    labels: (1..=k).map(|i| i.to_string()).collect(),
                    probs: vec![1.0 / k as f64; k],
                };
                (levels.clone(), levels)
            }
            StudyFamily::Gaussian { sigma } => (MarginSource::Normal { sigma }, MarginSource::Normal { sigma }),
            StudyFamily::Fgm => (MarginSource::Uniform01, MarginSource::Uniform01),
        }
    }

    fn default_route(&self, model: &RatioModel, divergence: DivergenceSpec) -> Route {
        match self {
            StudyFamily::Finite { .. } => Route::ChiSqExact,
            _ if divergence.gamma() == 1.0 && model.link() == Link::Exp => Route::ZtZ,
            _ => Route::Bootstrap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StudyStatistic {
    Dual(DivergenceSpec),
    Pearson,
    Spearman,
    Kendall,
}

impl StudyStatistic {
    pub fn parse(name: &str) -> Result<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "pearson" => Ok(Self::Pearson),
            "spearman" => Ok(Self::Spearman),
            "kendall" => Ok(Self::Kendall),
            other => DivergenceSpec::from_name(other)
                .map(Self::Dual)
                .ok_or_else(|| Error::Config(format!("unknown test `{other}`"))),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Self::Dual(d) => d.name(),
            Self::Pearson => "pearson".into(),
            Self::Spearman => "spearman".into(),
            Self::Kendall => "kendall".into(),
        }
    }
}

/// One test of a study and how it is calibrated.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyTest {
    pub label: String,
    pub statistic: StudyStatistic,
    /// Ratio model of a dual test; `None` takes the family default.
    pub model: Option<ModelSpec>,
    /// Calibration of a dual test; `None` takes the family default.
    pub route: Option<Route>,
    pub b_reps: usize,
    pub ztz_draws: usize,
    pub moment_draws: usize,
}

impl StudyTest {
    pub const DEFAULT_B_REPS: usize = 1000;

    pub fn new(statistic: StudyStatistic) -> Self {
        Self {
            label: statistic.name(),
            statistic,
            model: None,
            route: None,
            b_reps: Self::DEFAULT_B_REPS,
            ztz_draws: ZtzConfig::DEFAULT_DRAWS,
            moment_draws: ZtzConfig::DEFAULT_MOMENT_DRAWS,
        }
    }

    pub fn with_route(mut self, route: Route) -> Self {
        self.route = Some(route);
        self
    }

    pub fn with_b_reps(mut self, b_reps: usize) -> Self {
        self.b_reps = b_reps;
        self
    }

    const KEYS: [&'static str; 10] = [
        "name", "gamma", "label", "model", "lower", "upper", "route", "b_reps", "draws", "moment_draws",
    ];

    fn from_section(section: &Section) -> Result<Self> {
        section.check_keys(&Self::KEYS)?;
        let statistic = match (section.get("name"), section.parse::<f64>("gamma")?) {
            (Some(_), Some(_)) => return Err(Error::Config("a test takes `name` or `gamma`, not both".into())),
            (Some(name), None) => StudyStatistic::parse(name)?,
            (None, Some(g)) => StudyStatistic::Dual(DivergenceSpec::new(g)?),
            (None, None) => return Err(Error::Config("a test needs `name` or `gamma`".into())),
        };
        let mut test = Self::new(statistic);
        if let Some(label) = section.get("label") {
            test.label = label.to_string();
        }
        if let Some(desc) = section.get("model") {
            let mut spec = ModelSpec::parse(desc)?;
            spec.lower = section.get("lower").map(parse_floats).transpose()?;
            spec.upper = section.get("upper").map(parse_floats).transpose()?;
            test.model = Some(spec);
        } else if section.get("lower").is_some() || section.get("upper").is_some() {
            return Err(Error::Config("bounds need a `model`".into()));
        }
        test.route = section.get("route").map(Route::from_str).transpose()?;
        if let Some(b) = section.parse("b_reps")? {
            test.b_reps = b;
        }
        if let Some(d) = section.parse("draws")? {
            test.ztz_draws = d;
        }
        if let Some(m) = section.parse("moment_draws")? {
            test.moment_draws = m;
        }
        Ok(test)
    }

    fn to_section(&self) -> Section {
        let mut s = Section::new("test");
        match self.statistic {
            StudyStatistic::Dual(d) if DivergenceSpec::from_name(&d.name()).is_none() => s.push("gamma", d.gamma()),
            stat => s.push("name", stat.name()),
        }
        if self.label != self.statistic.name() {
            s.push("label", &self.label);
        }
        if let Some(spec) = &self.model {
            s.push("model", spec.descriptor());
            let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
            if let Some(l) = &spec.lower {
                s.push("lower", join(l));
            }
            if let Some(u) = &spec.upper {
                s.push("upper", join(u));
            }
        }
        if let Some(route) = self.route {
            s.push("route", route);
        }
        if self.b_reps != Self::DEFAULT_B_REPS {
            s.push("b_reps", self.b_reps);
        }
        if self.ztz_draws != ZtzConfig::DEFAULT_DRAWS {
            s.push("draws", self.ztz_draws);
        }
        if self.moment_draws != ZtzConfig::DEFAULT_MOMENT_DRAWS {
            s.push("moment_draws", self.moment_draws);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerStudyConfig {
    pub family: StudyFamily,
    pub grid: Vec<f64>,
    pub n: usize,
    pub reps: usize,
    pub alpha: f64,
    pub tests: Vec<StudyTest>,
    pub seed: u64,
}

impl PowerStudyConfig {
    pub const MIN_REPS: usize = 100;
    /// Share of errored replicates, per test and grid value, tolerated.
    pub const MAX_FAILED_SHARE: f64 = 0.02;

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::Config("empty parameter grid".into()));
        }
        if self.reps < Self::MIN_REPS {
            return Err(Error::Config(format!("need reps >= {}, got {}", Self::MIN_REPS, self.reps)));
        }
        if self.n < 4 {
            return Err(Error::Config(format!("need n >= 4, got {}", self.n)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("level {} must lie in (0, 1)", self.alpha)));
        }
        if self.tests.is_empty() {
            return Err(Error::Config("no tests".into()));
        }
        for &p in &self.grid {
            self.family.check_param(p)?;
        }
        for t in &self.tests {
            if t.label.is_empty() || t.label.contains([',', '"', '\n']) {
                return Err(Error::Config(format!("bad test label `{}`", t.label)));
            }
        }
        Ok(())
    }

    /// Tests run when the configuration lists none.
    pub fn default_tests(family: StudyFamily) -> Vec<StudyTest> {
        let mut tests = vec![
            StudyTest::new(StudyStatistic::Dual(DivergenceSpec::KL)),
            StudyTest::new(StudyStatistic::Dual(DivergenceSpec::CHISQ)),
        ];
        if !matches!(family, StudyFamily::Finite { .. }) {
            tests.extend([StudyStatistic::Pearson, StudyStatistic::Spearman, StudyStatistic::Kendall].map(StudyTest::new));
        }
        tests
    }

    /// Reads a `[study]` section and any number of `[test]` sections.
    /// `seed` overrides the seed of the file; one of the two must be present.
    pub fn from_config(doc: &ConfigDoc, seed: Option<u64>) -> Result<Self> {
        for s in &doc.sections {
            if s.name != "study" && s.name != "test" {
                return Err(Error::Parse {
                    line: s.line,
                    message: format!("unknown section [{}]", s.name),
                });
            }
        }
        let study = doc.unique("study")?;
        study.check_keys(&["family", "k", "sigma", "grid", "n", "reps", "alpha", "seed"])?;
        let family = match study.require("family")?.to_ascii_lowercase().as_str() {
            "finite" => StudyFamily::Finite {
                k: study.parse("k")?.unwrap_or(2),
            },
            "gaussian" => StudyFamily::Gaussian {
                sigma: study.parse("sigma")?.unwrap_or(1.0),
            },
            "fgm" => StudyFamily::Fgm,
            other => return Err(Error::Config(format!("unknown study family `{other}`"))),
        };
        let grid = parse_grid(study.require("grid")?)?;
        let seed = match (seed, study.parse::<u64>("seed")?) {
            (Some(s), _) | (None, Some(s)) => s,
            (None, None) => return Err(Error::Config("study needs a seed".into())),
        };
        let mut tests: Vec<StudyTest> = doc.sections_named("test").map(StudyTest::from_section).collect::<Result<_>>()?;
        if tests.is_empty() {
            tests = Self::default_tests(family);
        }
        let cfg = Self {
            family,
            grid,
            n: study.require("n")?.parse().map_err(|_| Error::Config("[study] n: not an integer".into()))?,
            reps: study.require("reps")?.parse().map_err(|_| Error::Config("[study] reps: not an integer".into()))?,
            alpha: study.parse("alpha")?.unwrap_or(0.05),
            tests,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_config(&self) -> ConfigDoc {
        let mut study = Section::new("study");
        study.push("family", self.family.name());
        match self.family {
            StudyFamily::Finite { k } => study.push("k", k),
            StudyFamily::Gaussian { sigma } => study.push("sigma", sigma),
            StudyFamily::Fgm => {}
        }
        let grid: Vec<String> = self.grid.iter().map(|g| g.to_string()).collect();
        study.push("grid", grid.join(", "));
        study.push("n", self.n);
        study.push("reps", self.reps);
        study.push("alpha", self.alpha);
        study.push("seed", self.seed);
        let mut sections = vec![study];
        sections.extend(self.tests.iter().map(StudyTest::to_section));
        ConfigDoc { sections }
    }
}

/// Grid values, either listed (`0, 0.28, 0.48`) or as fractions (`8/16`).
fn parse_grid(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|t| {
            let t = t.trim();
            let bad = || Error::Config(format!("grid value `{t}` is not a number"));
            match t.split_once('/') {
                Some((a, b)) => {
                    let a: f64 = a.trim().parse().map_err(|_| bad())?;
                    let b: f64 = b.trim().parse().map_err(|_| bad())?;
                    Ok(a / b)
                }
                None => t.parse().map_err(|_| bad()),
            }
        })
        .collect()
}

/// A calibrated test, ready to be applied to replicate samples.
#[derive(Debug, Clone)]
enum Prepared {
    Dual {
        divergence: DivergenceSpec,
        model: RatioModel,
        critical: f64,
    },
    Pearson,
    Spearman,
    Kendall,
}

/// Calibration chosen for each test, with its critical value where fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibrated {
    pub label: String,
    pub route: Route,
    pub critical_value: Option<f64>,
}

fn derived_seed(seed: u64, tag: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const PILOT_TAG: u64 = 1;
const TEST_TAG: u64 = 2;

fn prepare(cfg: &PowerStudyConfig) -> Result<Vec<(Prepared, Calibrated)>> {
    let mut pilot: Option<PairedSample> = None;
    let mut out = Vec::with_capacity(cfg.tests.len());
    for (t, test) in cfg.tests.iter().enumerate() {
        let t_seed = derived_seed(cfg.seed, TEST_TAG + t as u64);
        let baseline = |p: Prepared, route: Route| -> Result<(Prepared, Calibrated)> {
            if test.route.is_some_and(|r| r != route) {
                return Err(Error::RouteMismatch(format!("`{}` is calibrated by `{route}` only", test.label)));
            }
            if matches!(cfg.family, StudyFamily::Finite { .. }) {
                return Err(Error::Support("correlation tests need real-valued observations".into()));
            }
            Ok((
                p,
                Calibrated {
                    label: test.label.clone(),
                    route,
                    critical_value: None,
                },
            ))
        };
        let entry = match test.statistic {
            StudyStatistic::Pearson => baseline(Prepared::Pearson, Route::StudentT)?,
            StudyStatistic::Spearman => baseline(Prepared::Spearman, Route::StudentT)?,
            StudyStatistic::Kendall => baseline(Prepared::Kendall, Route::NormalApprox)?,
            StudyStatistic::Dual(divergence) => {
                let model = match &test.model {
                    Some(spec) => spec.build(None)?,
                    None => cfg.family.default_model()?,
                };
                let route = test.route.unwrap_or_else(|| cfg.family.default_route(&model, divergence));
                check_route(route, divergence.gamma(), &model)?;
                let critical = match route {
                    Route::ChiSqExact => chisq_exact_critical(&model, cfg.alpha)?.1,
                    Route::ZtZ => {
                        let (mx, my) = cfg.family.margins();
                        let cov = AsymptoticCovariances::under_h0(&model, &mx, &my, test.moment_draws, t_seed)?;
                        limit_quantile_ztz(&cov, cfg.alpha, test.ztz_draws, t_seed)
                    }
                    Route::Bootstrap => {
                        if pilot.is_none() {
                            let mut rng = stream_rng(derived_seed(cfg.seed, PILOT_TAG), 0);
                            pilot = Some(cfg.family.draw(0.0, cfg.n, &mut rng)?);
                        }
                        let ctx = ObjectiveContext::new(divergence, model.clone(), pilot.clone().unwrap())?;
                        let boot = BootstrapConfig::new(test.b_reps, cfg.alpha, t_seed)?;
                        bootstrap_critical(&ctx, &boot)?.critical_value
                    }
                    Route::StudentT | Route::NormalApprox => unreachable!("rejected by check_route"),
                };
                (
                    Prepared::Dual {
                        divergence,
                        model,
                        critical,
                    },
                    Calibrated {
                        label: test.label.clone(),
                        route,
                        critical_value: Some(critical),
                    },
                )
            }
        };
        out.push(entry);
    }
    Ok(out)
}

/// Reject decision of one test on one sample; `None` when the test failed.
fn apply(test: &Prepared, sample: &PairedSample, alpha: f64) -> Option<bool> {
    match test {
        Prepared::Dual {
            divergence,
            model,
            critical,
        } => {
            let ctx = ObjectiveContext::new(*divergence, model.clone(), sample.clone()).ok()?;
            let est = ctx.estimate();
            est.converged.then(|| 2.0 * ctx.n() as f64 * est.i_hat > *critical)
        }
        Prepared::Pearson => pearson_test(sample, alpha).ok().map(|r| r.reject),
        Prepared::Spearman => spearman_test(sample, alpha).ok().map(|r| r.reject),
        Prepared::Kendall => kendall_test(sample, alpha).ok().map(|r| r.reject),
    }
}

/// Study outcome with the calibrations that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerStudy {
    pub table: PowerTable,
    pub calibrations: Vec<Calibrated>,
}

pub fn run_power_study(cfg: &PowerStudyConfig) -> Result<PowerTable> {
    run_power_study_detailed(cfg).map(|s| s.table)
}

pub fn run_power_study_detailed(cfg: &PowerStudyConfig) -> Result<PowerStudy> {
    cfg.validate()?;
    let prepared = prepare(cfg)?;
    let mut rows = Vec::with_capacity(cfg.tests.len() * cfg.grid.len());
    let mut counts = vec![vec![(0usize, 0usize); cfg.grid.len()]; prepared.len()];
    for (g, &param) in cfg.grid.iter().enumerate() {
        let outcomes: Vec<Result<Vec<Option<bool>>>> = (0..cfg.reps)
            .into_par_iter()
            .map(|r| {
                let mut rng = stream_rng(cfg.seed, ((g as u64) << 32) | r as u64);
                let sample = cfg.family.draw(param, cfg.n, &mut rng)?;
                Ok(prepared.iter().map(|(p, _)| apply(p, &sample, cfg.alpha)).collect())
            })
            .collect();
        for outcome in outcomes {
            for (t, decision) in outcome?.into_iter().enumerate() {
                if let Some(reject) = decision {
                    counts[t][g].0 += usize::from(reject);
                    counts[t][g].1 += 1;
                }
            }
        }
    }
    for (t, (_, cal)) in prepared.iter().enumerate() {
        for (g, &param) in cfg.grid.iter().enumerate() {
            let (rejections, reps) = counts[t][g];
            let failed = cfg.reps - reps;
            if failed as f64 > PowerStudyConfig::MAX_FAILED_SHARE * cfg.reps as f64 {
                return Err(Error::OptimFailure {
                    failed,
                    total: cfg.reps,
                });
            }
            rows.push(PowerRow {
                test: cal.label.clone(),
                param,
                rejections,
                reps,
                n: cfg.n,
                alpha: cfg.alpha,
            });
        }
    }
    Ok(PowerStudy {
        table: PowerTable { rows },
        calibrations: prepared.into_iter().map(|(_, c)| c).collect(),
    })
}

/// Rejection count of one test at one grid value.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerRow {
    pub test: String,
    pub param: f64,
    pub rejections: usize,
    /// Replicates that produced a decision.
    pub reps: usize,
    pub n: usize,
    pub alpha: f64,
}

impl PowerRow {
    pub fn power(&self) -> f64 {
        if self.reps == 0 {
            return 0.0;
        }
        self.rejections as f64 / self.reps as f64
    }

    /// Monte-Carlo standard error √(p̂(1 − p̂)/reps).
    pub fn se(&self) -> f64 {
        if self.reps == 0 {
            return 0.0;
        }
        let p = self.power();
        (p * (1.0 - p) / self.reps as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PowerTable {
    pub rows: Vec<PowerRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Report,
    Curve,
}

impl FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "report" | "text" => Ok(Self::Report),
            "curve" => Ok(Self::Curve),
            other => Err(Error::Config(format!("unknown table format `{other}`"))),
        }
    }
}

impl PowerTable {
    pub fn row(&self, test: &str, param: f64) -> Option<&PowerRow> {
        self.rows.iter().find(|r| r.test == test && r.param == param)
    }

    /// Test labels in order of first appearance.
    pub fn tests(&self) -> Vec<&str> {
        let mut seen: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !seen.contains(&r.test.as_str()) {
                seen.push(&r.test);
            }
        }
        seen
    }

    fn params(&self) -> Vec<f64> {
        let mut seen: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !seen.contains(&r.param) {
                seen.push(r.param);
            }
        }
        seen
    }

    pub fn render(&self, format: TableFormat) -> String {
        match format {
            TableFormat::Csv => self.to_csv(),
            TableFormat::Report => self.to_report(),
            TableFormat::Curve => self.to_curve(),
        }
    }

    /// CSV with power and standard error to 4 decimals.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{FORMAT_HEADER}\n{CSV_COLUMNS}\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{:.4},{:.4},{},{},{}",
                r.test,
                r.param,
                r.power(),
                r.se(),
                r.reps,
                r.n,
                r.alpha
            )
            .unwrap();
        }
        out
    }

    /// Reads [`to_csv`](Self::to_csv) output. Rejection counts are recovered
    /// exactly when reps ≤ 10000.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let bad = |line: usize, message: String| Error::Parse { line: line + 1, message };
        match lines.next() {
            Some((_, h)) if h.trim() == FORMAT_HEADER => {}
            Some((i, h)) => return Err(bad(i, format!("expected `{FORMAT_HEADER}`, got `{h}`"))),
            None => return Err(bad(0, "empty input".into())),
        }
        match lines.next() {
            Some((_, h)) if h.trim() == CSV_COLUMNS => {}
            Some((i, h)) => return Err(bad(i, format!("unexpected columns `{h}`"))),
            None => return Err(bad(1, "missing column header".into())),
        }
        let mut rows = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 7 {
                return Err(bad(i, format!("expected 7 fields, got {}", fields.len())));
            }
            let num = |j: usize| -> Result<f64> {
                fields[j].parse::<f64>().map_err(|_| bad(i, format!("not a number: `{}`", fields[j])))
            };
            let int = |j: usize| -> Result<usize> {
                fields[j].parse::<usize>().map_err(|_| bad(i, format!("not a count: `{}`", fields[j])))
            };
            let reps = int(4)?;
            let power = num(2)?;
            if !(0.0..=1.0).contains(&power) {
                return Err(bad(i, format!("power {power} outside [0, 1]")));
            }
            rows.push(PowerRow {
                test: fields[0].to_string(),
                param: num(1)?,
                rejections: (power * reps as f64).round() as usize,
                reps,
                n: int(5)?,
                alpha: num(6)?,
            });
        }
        Ok(Self { rows })
    }

    /// Tests as columns, grid values as rows, MC standard errors in brackets.
    pub fn to_report(&self) -> String {
        let mut out = format!("{FORMAT_HEADER}\n");
        if let Some(r) = self.rows.first() {
            writeln!(out, "power study: n = {}, alpha = {}", r.n, r.alpha).unwrap();
        }
        let tests = self.tests();
        let width = tests.iter().map(|t| t.len()).max().unwrap_or(0).max(15);
        write!(out, "{:>10}", "param").unwrap();
        for t in &tests {
            write!(out, "  {t:>width$}").unwrap();
        }
        out.push('\n');
        for p in self.params() {
            write!(out, "{:>10}", format_param(p)).unwrap();
            for t in &tests {
                let cell = match self.row(t, p) {
                    Some(r) => format!("{:.4} ({:.4})", r.power(), r.se()),
                    None => "-".into(),
                };
                write!(out, "  {cell:>width$}").unwrap();
            }
            out.push('\n');
        }
        if let Some(r) = self.rows.first() {
            writeln!(out, "replicates per cell: {}", r.reps).unwrap();
        }
        out
    }

    /// Long format for power curves, with ±2 standard error bands.
    pub fn to_curve(&self) -> String {
        let mut out = format!("{FORMAT_HEADER}\n{CURVE_COLUMNS}\n");
        for r in &self.rows {
            let (p, se) = (r.power(), r.se());
            writeln!(
                out,
                "{},{},{:.4},{:.4},{:.4}",
                r.test,
                r.param,
                p,
                (p - 2.0 * se).max(0.0),
                (p + 2.0 * se).min(1.0)
            )
            .unwrap();
        }
        out
    }
}

fn format_param(p: f64) -> String {
    let s = p.to_string();
    if s.len() <= 10 {
        s
    } else {
        format!("{p:.6}")
    }
}

impl fmt::Display for PowerTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_report())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn finite_cfg(reps: usize, grid: Vec<f64>) -> PowerStudyConfig {
        PowerStudyConfig {
            family: StudyFamily::Finite { k: 2 },
            grid,
            n: 30,
            reps,
            alpha: 0.01,
            tests: PowerStudyConfig::default_tests(StudyFamily::Finite { k: 2 }),
            seed: 11,
        }
    }

    #[test]
    fn csv_round_trip_and_format() {
        let table = PowerTable {
            rows: vec![
                PowerRow {
                    test: "kl".into(),
                    param: 0.28,
                    rejections: 1681,
                    reps: 10000,
                    n: 30,
                    alpha: 0.01,
                },
                PowerRow {
                    test: "chisq".into(),
                    param: 0.5,
                    rejections: 7,
                    reps: 300,
                    n: 50,
                    alpha: 0.05,
                },
            ],
        };
        let csv = table.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("phimi-format=1"));
        assert_eq!(lines.next(), Some("test,param,power,se,reps,n,alpha"));
        assert_eq!(lines.next(), Some("kl,0.28,0.1681,0.0037,10000,30,0.01"));
        assert_eq!(lines.next(), Some("chisq,0.5,0.0233,0.0087,300,50,0.05"));
        assert_eq!(PowerTable::from_csv(&csv).unwrap(), table);

        let empty = PowerTable::default();
        assert_eq!(empty.to_csv(), "phimi-format=1\ntest,param,power,se,reps,n,alpha\n");
        assert_eq!(PowerTable::from_csv(&empty.to_csv()).unwrap(), empty);
        assert!(PowerTable::from_csv("test,param\n").is_err());
    }

    #[test]
    fn report_and_curve_render() {
        let table = PowerTable {
            rows: vec![PowerRow {
                test: "kl".into(),
                param: 1.0,
                rejections: 50,
                reps: 100,
                n: 50,
                alpha: 0.05,
            }],
        };
        let report = table.to_report();
        assert!(report.starts_with("phimi-format=1\n"));
        assert!(report.contains("0.5000 (0.0500)"));
        assert_eq!(table.to_curve().lines().nth(2), Some("kl,1,0.5000,0.4000,0.6000"));
    }

    #[test]
    fn study_is_reproducible() {
        let cfg = finite_cfg(200, vec![0.0, 0.9]);
        let a = run_power_study(&cfg).unwrap();
        let b = run_power_study(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 4);
        for t in ["kl", "chisq"] {
            assert!(a.row(t, 0.9).unwrap().power() > a.row(t, 0.0).unwrap().power());
            assert!(a.row(t, 0.9).unwrap().power() > 0.9);
        }
    }

    #[test]
    fn config_round_trip() {
        let text = "\
[study]
family = fgm
grid = 0, 8/16, 1
n = 50
reps = 2000
alpha = 0.05
seed = 5

[test]
name = kl
b_reps = 500

[test]
gamma = 0.3
model = expbilinear:xy
upper = 2

[test]
name = pearson
";
        let doc = ConfigDoc::parse(text).unwrap();
        let cfg = PowerStudyConfig::from_config(&doc, None).unwrap();
        assert_eq!(cfg.grid, vec![0.0, 0.5, 1.0]);
        assert_eq!(cfg.tests.len(), 3);
        assert_eq!(cfg.tests[0].b_reps, 500);
        assert_eq!(cfg.tests[1].label, "gamma=0.3");
        assert_eq!(cfg.tests[1].model.as_ref().unwrap().upper, Some(vec![2.0]));
        let again = PowerStudyConfig::from_config(&cfg.to_config(), None).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(PowerStudyConfig::from_config(&doc, Some(9)).unwrap().seed, 9);

        let bad = ConfigDoc::parse("[study]\nfamily = fgm\ngrid = 2\nn = 50\nreps = 200\nseed = 1\n").unwrap();
        assert!(PowerStudyConfig::from_config(&bad, None).is_err());
        let no_seed = ConfigDoc::parse("[study]\nfamily = fgm\ngrid = 0\nn = 50\nreps = 200\n").unwrap();
        assert!(PowerStudyConfig::from_config(&no_seed, None).is_err());
    }

    #[test]
    fn invalid_routes_are_rejected() {
        let mut cfg = finite_cfg(100, vec![0.0]);
        cfg.tests = vec![StudyTest::new(StudyStatistic::Pearson)];
        assert!(run_power_study(&cfg).is_err());
        cfg.family = StudyFamily::Fgm;
        cfg.tests = vec![StudyTest::new(StudyStatistic::Dual(DivergenceSpec::KL)).with_route(Route::ChiSqExact)];
        assert!(matches!(run_power_study(&cfg), Err(Error::RouteMismatch(_))));
        cfg.reps = 10;
        assert!(run_power_study(&cfg).is_err());
    }
}
