use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use t3s::bench::{emit_report, monotonicity_check, run_bench, LoadedManifest, ReportFormat};
use t3s::constraints::{check_constraints, ScoredScenario};
use t3s::fbd::{fit, load_training_dir, FitHyper};
use t3s::synth::{build_suite, load_suite, SuiteKind, SuiteSpec};
use t3s::{score_pair, EmbeddingTable, FbdWeights, ImageSide, MetricConfig, PairInput};

const CONFIG_ENV: &str = "T3S_CONFIG";

/// Triplet-based semantic similarity for full-reference image evaluation.
#[derive(Parser)]
#[command(name = "t3s", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score one reference/distorted pair.
    Score(ScoreArgs),
    /// Score a manifest of degraded pairs and aggregate by degradation and level.
    Bench(BenchArgs),
    /// Generate a synthetic scenario suite.
    Synth(SynthArgs),
    /// Score a synthetic suite and check the metric constraints.
    Validate(ValidateArgs),
    /// Train decoupling weights from labeled entity sets.
    FbdFit(FitArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Metric configuration JSON; defaults to $T3S_CONFIG, then built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<MetricConfig> {
        let path = self
            .config
            .clone()
            .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
        match path {
            Some(p) => Ok(MetricConfig::load(&p)?),
            None => Ok(MetricConfig::default()),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScoreFormat {
    Json,
    Csv,
}

#[derive(Args)]
struct ScoreArgs {
    /// Reference entity set.
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Distorted entity set.
    #[arg(long)]
    dist: PathBuf,
    #[arg(long)]
    ann_ref: PathBuf,
    #[arg(long)]
    ann_dist: PathBuf,
    /// Word-embedding table in word2vec text format.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Decoupling weights JSON.
    #[arg(long)]
    fbd: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_enum, default_value = "json")]
    format: ScoreFormat,
    /// Average both scoring directions.
    #[arg(long)]
    symmetric: bool,
    /// Score raw features of all entities as foreground.
    #[arg(long)]
    no_fbd: bool,
    /// Drop the relation branch.
    #[arg(long)]
    no_relation: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum BenchFormat {
    Csv,
    Markdown,
    Json,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Worker threads used for scoring.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: BenchFormat,
    /// Exit 1 unless every degradation's level curve is non-increasing within the slack.
    #[arg(long)]
    require_monotone: bool,
    /// Record unreadable or invalid pairs as skips instead of aborting.
    #[arg(long)]
    keep_going: bool,
    /// Allowed increase between consecutive level means.
    #[arg(long, default_value_t = t3s::bench::DEFAULT_SLACK)]
    slack: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Constraints,
    ThreeLevel,
    Bench,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum)]
    suite: SuiteArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Number of base scenes (default: 100, or 10 for bench suites).
    #[arg(long)]
    scenes: Option<usize>,
    #[arg(long, default_value_t = t3s::synth::DEFAULT_ENTITIES)]
    entities: usize,
    #[arg(long, default_value_t = t3s::synth::DEFAULT_DIM)]
    dim: usize,
}

#[derive(Args)]
struct ValidateArgs {
    /// Suite directory or manifest file.
    #[arg(long)]
    suite: PathBuf,
    /// Also write the constraint report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct FitArgs {
    /// Directory of entity-set JSON files.
    #[arg(long)]
    train: PathBuf,
    /// `{"image_id": {"entity_id": 0 | 1}}` labels.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 1.0)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Latent width (default: twice the feature width).
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long, default_value_t = t3s::fbd::DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = t3s::fbd::DEFAULT_BETA)]
    beta: f64,
}

enum Failure {
    /// Bad invocation: exit code 2.
    Usage(String),
    /// Invalid data or a failed check: exit code 1.
    Data(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

impl From<t3s::Error> for Failure {
    fn from(e: t3s::Error) -> Self {
        Failure::Data(e.into())
    }
}

type Outcome = std::result::Result<ExitCode, Failure>;

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn score(args: ScoreArgs) -> Outcome {
    let mut cfg = args.config.load()?;
    cfg.symmetric_mode |= args.symmetric;
    cfg.disable_fbd |= args.no_fbd;
    cfg.disable_relation |= args.no_relation;
    if args.embeddings.is_none() && !cfg.disable_relation {
        return Err(Failure::Usage(
            "--embeddings is required while the relation branch is enabled (pass --no-relation to drop it)".into(),
        ));
    }
    if args.fbd.is_none() && !cfg.disable_fbd {
        return Err(Failure::Usage("--fbd is required unless --no-fbd is given".into()));
    }
    let table = args.embeddings.as_ref().map(EmbeddingTable::load).transpose()?;
    let weights = args.fbd.as_ref().map(FbdWeights::load).transpose()?;
    let pair = PairInput::new(
        ImageSide::load(&args.reference, &args.ann_ref)?,
        ImageSide::load(&args.dist, &args.ann_dist)?,
    );
    let report = score_pair(&pair, weights.as_ref(), table.as_ref(), &cfg)?;
    match args.format {
        ScoreFormat::Json => println!("{}", report.to_json()),
        ScoreFormat::Csv => print!("{}", report.to_csv()),
    }
    Ok(ExitCode::SUCCESS)
}

fn bench(args: BenchArgs) -> Outcome {
    if args.parallel == 0 {
        return Err(Failure::Usage("--parallel must be at least 1".into()));
    }
    let loaded = LoadedManifest::load(&args.manifest)?;
    let mut report = run_bench(&loaded, args.parallel, args.keep_going)?;
    if args.slack != report.slack {
        report.slack = args.slack;
        report.monotonicity = monotonicity_check(&report, args.slack);
    }
    let format = match args.format {
        BenchFormat::Csv => ReportFormat::Csv,
        BenchFormat::Markdown => ReportFormat::Markdown,
        BenchFormat::Json => ReportFormat::Json,
    };
    write_output(args.out.as_deref(), &emit_report(&report, format))?;
    for v in report.monotonicity.iter().filter(|v| !v.passed) {
        if let Some((from, to, up)) = v.offending {
            eprintln!(
                "{}: mean rises by {up:.4} from level {from} to level {to} (slack {})",
                v.degradation, report.slack
            );
        }
    }
    if !report.skips.is_empty() {
        eprintln!("{} pair(s) skipped", report.skips.len());
    }
    if args.require_monotone && !report.monotone() {
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn synth(args: SynthArgs) -> Outcome {
    let kind = match args.suite {
        SuiteArg::Constraints => SuiteKind::Constraints,
        SuiteArg::ThreeLevel => SuiteKind::ThreeLevel,
        SuiteArg::Bench => SuiteKind::Bench,
    };
    let defaults = SuiteSpec::new(kind);
    let spec = SuiteSpec {
        scenes: args.scenes.unwrap_or(defaults.scenes),
        n_entities: args.entities,
        dim: args.dim,
        ..defaults
    };
    let manifest = build_suite(&spec, args.seed, &args.out)?;
    println!("{}", manifest.display());
    Ok(ExitCode::SUCCESS)
}

fn validate(args: ValidateArgs) -> Outcome {
    let cfg = args.config.load()?;
    let suite = load_suite(&args.suite)?;
    let scored = suite
        .cases
        .iter()
        .enumerate()
        .map(|(i, (meta, pair))| {
            let report = score_pair(pair, suite.weights.as_ref(), Some(&suite.table), &cfg)
                .with_context(|| format!("scenario {i}"))?;
            Ok(ScoredScenario {
                meta: meta.clone(),
                report,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = check_constraints(&scored);
    print!("{report}");
    if let Some(path) = &args.report {
        write_output(Some(path), &report.to_json())?;
    }
    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn fbd_fit(args: FitArgs) -> Outcome {
    if !(args.lr.is_finite() && args.lr > 0.0) {
        return Err(Failure::Usage("--lr must be a positive number".into()));
    }
    let data = load_training_dir(&args.train, &args.labels)?;
    let hyper = FitHyper {
        learning_rate: args.lr,
        epochs: args.epochs,
        latent_dim: args.latent_dim,
        alpha: args.alpha,
        beta: args.beta,
    };
    let result = fit(&data, &hyper, args.seed)?;
    result.weights.save(&args.out)?;
    let summary = serde_json::json!({
        "initial_loss": result.loss_history.first(),
        "final_loss": result.loss_history.last(),
        "accepted_steps": result.loss_history.len() - 1,
        "rejected_steps": result.rejected_steps,
        "out": args.out,
    });
    println!("{summary}");
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let outcome = match cli.command {
        Command::Score(a) => score(a),
        Command::Bench(a) => bench(a),
        Command::Synth(a) => synth(a),
        Command::Validate(a) => validate(a),
        Command::FbdFit(a) => fbd_fit(a),
    };
    match outcome {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
