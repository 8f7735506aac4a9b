//! `phimi`: dual φ-mutual information estimation and independence tests.

mod output;

use std::collections::hash_map::RandomState;
use std::fs;
use std::hash::{BuildHasher, Hasher};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use phimi::asymptotics::{limit_quantile_ztz, AsymptoticCovariances, MarginSource};
use phimi::config::ConfigDoc;
use phimi::io::{ingest_csv, ColumnKind};
use phimi::models::{Family, ModelKind};
use phimi::numeric::{ecdf_quantile, mean_var};
use phimi::selection::{cross_validate, CvConfig};
use phimi::study::{run_power_study, PowerStudyConfig, TableFormat};
use phimi::testing::{
    bootstrap_critical, chisq_exact_critical, kendall_test, pearson_test, spearman_test, test_independence,
    BootstrapConfig, Calibration, Route, TestResult, ZtzConfig,
};
use phimi::{DivergenceSpec, Link, ModelSpec, ObjectiveContext, PairedSample, RatioModel};

use output::{render, Format, Record};

#[derive(Parser, Debug)]
#[command(name = "phimi", version, about = "Dual estimation of phi-mutual information and independence tests")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "PHIMI_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Dual estimate of I_phi and the fitted ratio parameters.
    Estimate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        divergence: DivergenceArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Independence test based on S_n = 2n I_phi, or a correlation baseline.
    Test {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        divergence: DivergenceArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Test statistic.
        #[arg(long, value_enum, default_value_t = Statistic::Dual)]
        statistic: Statistic,
        /// Calibration route: ztz, chisq-exact or bootstrap.
        #[arg(long, value_parser = parse_route)]
        route: Option<Route>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = BootstrapConfig::DEFAULT_REPS)]
        b_reps: usize,
        /// Draws of ZtZ for the asymptotic quantile.
        #[arg(long, default_value_t = ZtzConfig::DEFAULT_DRAWS)]
        draws: usize,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Bootstrap critical value from the product of the empirical margins.
    Bootstrap {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        divergence: DivergenceArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = BootstrapConfig::DEFAULT_REPS)]
        b_reps: usize,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// k-fold cross-validation over candidate ratio models.
    Select {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        divergence: DivergenceArgs,
        /// Candidate models separated by `;`, e.g. "gaussian;expbilinear:xy;fgm".
        #[arg(long)]
        candidates: Option<String>,
        /// Configuration file with one [model] section per candidate.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = CvConfig::DEFAULT_FOLDS)]
        k: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Monte-Carlo power study described by a configuration file.
    Power {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed of the configuration file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = TableKind::Csv)]
        format: TableKind,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Asymptotic critical value for a model and known margins.
    Limits {
        #[command(flatten)]
        model: ModelArgs,
        /// Margin of X: normal[:sigma], uniform or levels:a,b,...
        #[arg(long, default_value = "normal:1", value_parser = parse_margin)]
        margin_x: MarginSource,
        /// Margin of Y, same syntax as --margin-x.
        #[arg(long, default_value = "normal:1", value_parser = parse_margin)]
        margin_y: MarginSource,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = ZtzConfig::DEFAULT_DRAWS)]
        draws: usize,
        /// Monte-Carlo draws per margin for the moments of continuous margins.
        #[arg(long, default_value_t = ZtzConfig::DEFAULT_MOMENT_DRAWS)]
        moment_draws: usize,
        #[command(flatten)]
        output: OutputArgs,
    },
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Input CSV file with a header row.
    #[arg(long)]
    csv: PathBuf,
    #[arg(long, default_value = "x")]
    x: String,
    #[arg(long, default_value = "y")]
    y: String,
    #[arg(long, value_enum, default_value_t = Kind::Real)]
    kind: Kind,
}

#[derive(Args, Debug)]
struct DivergenceArgs {
    /// kl, klm, hellinger, chisq or chisqm.
    #[arg(long, value_parser = parse_divergence, conflicts_with = "gamma")]
    divergence: Option<DivergenceSpec>,
    /// Index of the power divergence.
    #[arg(long, allow_hyphen_values = true)]
    gamma: Option<f64>,
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// gaussian, expbilinear:<terms>, finite or fgm.
    #[arg(long, value_parser = parse_model)]
    model: Option<ModelSpec>,
    /// Lower bounds, one value or one per parameter.
    #[arg(long, allow_hyphen_values = true)]
    lower: Option<String>,
    /// Upper bounds, one value or one per parameter.
    #[arg(long, allow_hyphen_values = true)]
    upper: Option<String>,
    /// Levels of X for the finite model.
    #[arg(long)]
    levels_x: Option<String>,
    /// Levels of Y for the finite model.
    #[arg(long)]
    levels_y: Option<String>,
}

#[derive(Args, Debug)]
struct OutputArgs {
    #[arg(long, value_enum, default_value_t = Format::Human)]
    format: Format,
    /// Write to this file instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Kind {
    Real,
    Categorical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Statistic {
    Dual,
    Pearson,
    Spearman,
    Kendall,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TableKind {
    Csv,
    Report,
    Curve,
}

fn parse_divergence(s: &str) -> Result<DivergenceSpec, String> {
    DivergenceSpec::from_name(s).ok_or_else(|| format!("unknown divergence `{s}`"))
}

fn parse_route(s: &str) -> Result<Route, String> {
    s.parse().map_err(|e: phimi::Error| e.to_string())
}

fn parse_model(s: &str) -> Result<ModelSpec, String> {
    ModelSpec::parse(s).map_err(|e| e.to_string())
}

fn parse_margin(s: &str) -> Result<MarginSource, String> {
    let (kind, rest) = match s.split_once(':') {
        Some((k, r)) => (k.trim(), Some(r.trim())),
        None => (s.trim(), None),
    };
    match (kind.to_ascii_lowercase().as_str(), rest) {
        ("normal", None) => Ok(MarginSource::Normal { sigma: 1.0 }),
        ("normal", Some(sigma)) => match sigma.parse::<f64>() {
            Ok(sigma) if sigma > 0.0 => Ok(MarginSource::Normal { sigma }),
            _ => Err(format!("bad standard deviation `{sigma}`")),
        },
        ("uniform", None) => Ok(MarginSource::Uniform01),
        ("levels", Some(list)) => {
            let labels = split_list(list);
            if labels.len() < 2 {
                return Err("need at least two levels".into());
            }
            let probs = vec![1.0 / labels.len() as f64; labels.len()];
            Ok(MarginSource::Levels { labels, probs })
        }
        _ => Err(format!("unknown margin `{s}`")),
    }
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(|t| t.trim().to_string()).filter(|t| !t.is_empty()).collect()
}

enum Failure {
    Usage(String),
    Runtime(phimi::Error),
}

impl From<phimi::Error> for Failure {
    fn from(e: phimi::Error) -> Self {
        Failure::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Estimate {
            data,
            divergence,
            model,
            output,
        } => estimate(&data, &divergence, &model, &output),
        Command::Test {
            data,
            divergence,
            model,
            statistic,
            route,
            alpha,
            seed,
            b_reps,
            draws,
            output,
        } => {
            let sample = load(&data)?;
            let record = match statistic {
                Statistic::Dual => {
                    let ctx = context(sample, &divergence, &model)?;
                    let route = route.unwrap_or_else(|| default_route(&ctx));
                    let mut used_seed = None;
                    let calibration = match route {
                        Route::ChiSqExact => Calibration::ChiSqExact,
                        Route::ZtZ => {
                            let seed = *used_seed.insert(resolve_seed(seed));
                            Calibration::ZtZ(ZtzConfig {
                                n_draws: draws,
                                ..ZtzConfig::empirical(seed)
                            })
                        }
                        Route::Bootstrap => {
                            let seed = *used_seed.insert(resolve_seed(seed));
                            Calibration::Bootstrap(BootstrapConfig::new(b_reps, alpha, seed)?)
                        }
                        other => return Err(Failure::Usage(format!("route `{other}` is for correlation baselines"))),
                    };
                    let test = test_independence(&ctx, &calibration, alpha)?;
                    let mut record = describe_context(&ctx);
                    record.push("i_hat", test.estimate.i_hat);
                    record.push("converged", test.estimate.converged);
                    push_result(&mut record, &test.result);
                    if let Some(seed) = used_seed {
                        record.push("seed", seed);
                    }
                    record
                }
                baseline => {
                    if route.is_some() {
                        return Err(Failure::Usage("--route applies to the dual test only".into()));
                    }
                    let result = match baseline {
                        Statistic::Pearson => pearson_test(&sample, alpha)?,
                        Statistic::Spearman => spearman_test(&sample, alpha)?,
                        _ => kendall_test(&sample, alpha)?,
                    };
                    let mut record = Record::new();
                    record.push("test", format!("{baseline:?}").to_ascii_lowercase());
                    record.push("n", sample.len());
                    push_result(&mut record, &result);
                    record
                }
            };
            emit(&render(&[record], output.format), &output.out)
        }
        Command::Bootstrap {
            data,
            divergence,
            model,
            alpha,
            seed,
            b_reps,
            output,
        } => {
            let ctx = context(load(&data)?, &divergence, &model)?;
            let seed = resolve_seed(seed);
            let cfg = BootstrapConfig::new(b_reps, alpha, seed)?;
            let outcome = bootstrap_critical(&ctx, &cfg)?;
            let mut sorted = outcome.replicates.clone();
            sorted.sort_by(f64::total_cmp);
            let (mean, var) = mean_var(&sorted);
            let mut record = describe_context(&ctx);
            record
                .push("alpha", alpha)
                .push("seed", seed)
                .push("b_reps", b_reps)
                .push("critical_value", outcome.critical_value)
                .push("nonconverged", outcome.nonconverged)
                .push("replicate_mean", mean)
                .push("replicate_sd", var.sqrt())
                .push("replicate_min", sorted[0])
                .push("replicate_median", ecdf_quantile(&sorted, 0.5))
                .push("replicate_max", sorted[sorted.len() - 1]);
            emit(&render(&[record], output.format), &output.out)
        }
        Command::Select {
            data,
            divergence,
            candidates,
            config,
            k,
            seed,
            output,
        } => {
            let sample = load(&data)?;
            let mut specs: Vec<ModelSpec> = Vec::new();
            if let Some(list) = &candidates {
                for desc in list.split(';').map(str::trim).filter(|d| !d.is_empty()) {
                    specs.push(ModelSpec::parse(desc).map_err(|e| Failure::Usage(e.to_string()))?);
                }
            }
            if let Some(path) = &config {
                let doc = ConfigDoc::parse(&fs::read_to_string(path).map_err(phimi::Error::from)?)?;
                for section in &doc.sections {
                    if section.name != "model" {
                        return Err(phimi::Error::Parse {
                            line: section.line,
                            message: format!("unexpected section [{}]", section.name),
                        }
                        .into());
                    }
                    specs.push(ModelSpec::from_pairs(&section.entries)?);
                }
            }
            if specs.is_empty() {
                return Err(Failure::Usage("give candidate models with --candidates or --config".into()));
            }
            let models: Vec<RatioModel> = specs.iter().map(|s| s.build(Some(&sample))).collect::<Result<_, _>>()?;
            let seed = resolve_seed(seed);
            let cfg = CvConfig {
                k,
                candidates: models,
                divergence: divergence_of(&divergence)?,
                seed,
            };
            let report = cross_validate(&sample, &cfg)?;
            let records: Vec<Record> = report
                .candidates
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let mut r = Record::new();
                    r.push("candidate", i + 1)
                        .push("model", &c.descriptor)
                        .push("dim", c.dim)
                        .push("score", c.score.map_or("NA".to_string(), |s| s.to_string()))
                        .push("selected", i == report.selected)
                        .push("k", k)
                        .push("seed", seed)
                        .push("failure", c.failure.as_deref().unwrap_or(""));
                    r
                })
                .collect();
            emit(&render(&records, output.format), &output.out)
        }
        Command::Power {
            config,
            seed,
            format,
            out,
        } => {
            let doc = ConfigDoc::parse(&fs::read_to_string(&config).map_err(phimi::Error::from)?)?;
            let has_seed = doc.unique("study").map(|s| s.get("seed").is_some()).unwrap_or(false);
            let seed = if seed.is_none() && !has_seed {
                Some(resolve_seed(None))
            } else {
                seed
            };
            let cfg = PowerStudyConfig::from_config(&doc, seed)?;
            let table = run_power_study(&cfg)?;
            let format = match format {
                TableKind::Csv => TableFormat::Csv,
                TableKind::Report => TableFormat::Report,
                TableKind::Curve => TableFormat::Curve,
            };
            emit(&table.render(format), &out)
        }
        Command::Limits {
            model,
            margin_x,
            margin_y,
            alpha,
            seed,
            draws,
            moment_draws,
            output,
        } => {
            let mut spec = model_spec(&model)?.unwrap_or_else(|| ModelSpec::parse("gaussian").expect("built-in model"));
            if let ModelKind::Finite { x_levels, y_levels } = &mut spec.kind {
                // level lists of the margins stand in for missing --levels-x/--levels-y
                for (levels, margin) in [(x_levels, &margin_x), (y_levels, &margin_y)] {
                    if let (None, MarginSource::Levels { labels, .. }) = (&levels, margin) {
                        *levels = Some(labels.clone());
                    }
                }
            }
            let ratio = spec.build(None)?;
            let mut record = Record::new();
            record.push("model", ratio.descriptor()).push("alpha", alpha);
            if let Family::FiniteDiscrete { x_levels, y_levels } = ratio.family() {
                let (df, critical) = chisq_exact_critical(&ratio, alpha)?;
                record
                    .push("levels", format!("{}x{}", x_levels.len(), y_levels.len()))
                    .push("route", Route::ChiSqExact)
                    .push("df", df)
                    .push("critical_value", critical);
            } else {
                if ratio.link() != Link::Exp {
                    return Err(phimi::Error::RouteMismatch("the limit law needs an exponential model".into()).into());
                }
                if !(alpha > 0.0 && alpha < 1.0) || draws == 0 {
                    return Err(Failure::Usage("need 0 < alpha < 1 and draws > 0".into()));
                }
                let seed = resolve_seed(seed);
                let cov = AsymptoticCovariances::under_h0(&ratio, &margin_x, &margin_y, moment_draws, seed)?;
                record
                    .push("route", Route::ZtZ)
                    .push("seed", seed)
                    .push("draws", draws)
                    .push("moment_draws", moment_draws)
                    .push_list("eigenvalues", cov.eigenvalues())
                    .push("critical_value", limit_quantile_ztz(&cov, alpha, draws, seed));
            }
            emit(&render(&[record], output.format), &output.out)
        }
    }
}

fn estimate(data: &DataArgs, divergence: &DivergenceArgs, model: &ModelArgs, output: &OutputArgs) -> CliResult<()> {
    let ctx = context(load(data)?, divergence, model)?;
    let est = ctx.estimate();
    let mut record = describe_context(&ctx);
    record
        .push("i_hat", est.i_hat)
        .push("statistic", 2.0 * ctx.n() as f64 * est.i_hat)
        .push_list("theta_hat", est.theta_hat.as_slice())
        .push("converged", est.converged)
        .push("grad_norm", est.grad_norm)
        .push("objective_evals", est.objective_evals);
    emit(&render(&[record], output.format), &output.out)
}

fn load(data: &DataArgs) -> CliResult<PairedSample> {
    let kind = match data.kind {
        Kind::Real => ColumnKind::Real,
        Kind::Categorical => ColumnKind::Categorical,
    };
    Ok(ingest_csv(&data.csv, &data.x, &data.y, kind)?)
}

fn divergence_of(args: &DivergenceArgs) -> CliResult<DivergenceSpec> {
    match (args.divergence, args.gamma) {
        (Some(d), _) => Ok(d),
        (None, Some(g)) => DivergenceSpec::new(g).map_err(|e| Failure::Usage(e.to_string())),
        (None, None) => Ok(DivergenceSpec::KL),
    }
}

/// Model from the flags; `None` when --model is absent.
fn model_spec(args: &ModelArgs) -> CliResult<Option<ModelSpec>> {
    let Some(mut spec) = args.model.clone() else {
        if args.lower.is_some() || args.upper.is_some() || args.levels_x.is_some() || args.levels_y.is_some() {
            return Err(Failure::Usage("bounds and levels need --model".into()));
        }
        return Ok(None);
    };
    let floats = |s: &Option<String>| -> CliResult<Option<Vec<f64>>> {
        s.as_deref()
            .map(|v| {
                v.split(',')
                    .map(|t| t.trim().parse::<f64>().map_err(|_| Failure::Usage(format!("bad bound `{t}`"))))
                    .collect()
            })
            .transpose()
    };
    spec.lower = floats(&args.lower)?;
    spec.upper = floats(&args.upper)?;
    if args.levels_x.is_some() || args.levels_y.is_some() {
        match &mut spec.kind {
            ModelKind::Finite { x_levels, y_levels } => {
                *x_levels = args.levels_x.as_deref().map(split_list);
                *y_levels = args.levels_y.as_deref().map(split_list);
            }
            _ => return Err(Failure::Usage("levels apply to the finite model only".into())),
        }
    }
    Ok(Some(spec))
}

fn context(sample: PairedSample, divergence: &DivergenceArgs, model: &ModelArgs) -> CliResult<ObjectiveContext> {
    let spec = match model_spec(model)? {
        Some(spec) => spec,
        None if sample.is_real() => ModelSpec::parse("gaussian").expect("built-in model"),
        None => ModelSpec::parse("finite").expect("built-in model"),
    };
    let ratio = spec.build(Some(&sample))?;
    Ok(ObjectiveContext::new(divergence_of(divergence)?, ratio, sample)?)
}

fn default_route(ctx: &ObjectiveContext) -> Route {
    match ctx.model().family() {
        Family::FiniteDiscrete { .. } => Route::ChiSqExact,
        _ if ctx.divergence().gamma() == 1.0 && ctx.model().link() == Link::Exp => Route::ZtZ,
        _ => Route::Bootstrap,
    }
}

fn describe_context(ctx: &ObjectiveContext) -> Record {
    let mut r = Record::new();
    r.push("divergence", ctx.divergence().name())
        .push("gamma", ctx.divergence().gamma())
        .push("model", ctx.model().descriptor())
        .push("n", ctx.n());
    r
}

fn push_result(record: &mut Record, result: &TestResult) {
    record
        .push("statistic", result.statistic)
        .push("critical_value", result.critical_value)
        .push("p_value", result.p_value.map_or("NA".to_string(), |p| p.to_string()))
        .push("reject", result.reject)
        .push("route", result.route)
        .push("alpha", result.alpha);
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = RandomState::new().build_hasher().finish();
        eprintln!("seed = {s}");
        s
    })
}

fn emit(text: &str, out: &Option<PathBuf>) -> CliResult<()> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Failure::Runtime(e.into())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
