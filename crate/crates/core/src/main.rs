use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use drift_eval::config::RunConfig;
use drift_eval::evolve::EditedVariant;
use drift_eval::ingest::load_corpus_snapshot;
use drift_eval::pipeline::{Endpoints, Pipeline, Stage, StageStatus};
use drift_eval::store::{read_jsonl, write_atomic};
use drift_eval::verbatim::{leakage_rate, CorpusIndex, IndexOptions};
use drift_eval::{DatasetId, Error, Result};

/// Measures how reader accuracy changes as passages drift from the
/// versions models were trained on.
#[derive(Parser)]
#[command(name = "drift-eval", version)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a run configuration and report every problem.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run every stage in order, or one stage with --stage.
    Run {
        #[arg(long)]
        stage: Option<Stage>,
        #[command(flatten)]
        args: StageArgs,
    },
    Ingest(StageArgs),
    Evolve(StageArgs),
    Similarity(StageArgs),
    /// Run the verbatim stage, or audit a corpus directly with
    /// --corpus/--variants/--out.
    Verbatim(VerbatimArgs),
    Infer(StageArgs),
    Score(StageArgs),
    Analyze(StageArgs),
    Report(StageArgs),
}

#[derive(Args)]
struct StageArgs {
    #[arg(long)]
    config: PathBuf,
    /// Rerun even when inputs are unchanged.
    #[arg(long)]
    force: bool,
    /// Restrict to one model.
    #[arg(long)]
    llm: Option<String>,
    /// Restrict to one dataset.
    #[arg(long)]
    dataset: Option<DatasetId>,
}

#[derive(Args)]
struct VerbatimArgs {
    #[arg(long, conflicts_with_all = ["corpus", "variants", "out"])]
    config: Option<PathBuf>,
    #[arg(long)]
    force: bool,
    #[arg(long, requires_all = ["variants", "out"])]
    corpus: Option<PathBuf>,
    #[arg(long)]
    variants: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Match raw text byte-for-byte instead of normalized text.
    #[arg(long)]
    raw_exact: bool,
    /// Also save the built index here.
    #[arg(long)]
    save_index: Option<PathBuf>,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::StaleInput { .. } | Error::MissingUpstream { .. } => 3,
        Error::FailureBudget { .. } => 4,
        _ => 1,
    }
}

fn pipeline(args: &StageArgs) -> Result<Pipeline> {
    let config = RunConfig::load(&args.config)?;
    let endpoints = Endpoints::from_config(&config);
    Pipeline::new(config, endpoints)
        .with_force(args.force)
        .restrict(args.llm.as_deref(), args.dataset)
}

fn report_status(stage: Stage, status: StageStatus) {
    let word = match status {
        StageStatus::Ran => "ran",
        StageStatus::Skipped => "skipped (up to date)",
    };
    println!("{stage}: {word}");
}

fn run_one(args: &StageArgs, stage: Stage) -> Result<()> {
    let status = pipeline(args)?.run_stage(stage)?;
    report_status(stage, status);
    Ok(())
}

fn audit(corpus: &Path, variants: &Path, out: &Path, raw_exact: bool, save_index: Option<&Path>) -> Result<()> {
    let tag = corpus
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let options = IndexOptions {
        normalize: !raw_exact,
        ..IndexOptions::default()
    };
    let index = CorpusIndex::build(load_corpus_snapshot(corpus, &tag)?, options)?;
    if let Some(path) = save_index {
        index.save(path)?;
    }
    let variants: Vec<EditedVariant> = read_jsonl(variants)?;
    let report = leakage_rate(&variants, &index)?;
    let mut bytes = serde_json::to_vec_pretty(&report.by_dataset)?;
    bytes.push(b'\n');
    write_atomic(out, &bytes)?;
    for (dataset, summary) in &report.by_dataset {
        match summary.rate_percent {
            Some(rate) => println!("{dataset}: {rate:.2}% of {} passages found verbatim", summary.n),
            None => println!("{dataset}: no passages queried"),
        }
    }
    Ok(())
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Validate { config } => {
            let config = RunConfig::load(&config)?;
            println!("configuration valid (hash {})", config.config_hash());
            Ok(())
        }
        Command::Run { stage: Some(stage), args } => run_one(&args, stage),
        Command::Run { stage: None, args } => {
            for (stage, status) in pipeline(&args)?.run_all()? {
                report_status(stage, status);
            }
            Ok(())
        }
        Command::Ingest(a) => run_one(&a, Stage::Ingest),
        Command::Evolve(a) => run_one(&a, Stage::Evolve),
        Command::Similarity(a) => run_one(&a, Stage::Similarity),
        Command::Infer(a) => run_one(&a, Stage::Infer),
        Command::Score(a) => run_one(&a, Stage::Score),
        Command::Analyze(a) => run_one(&a, Stage::Analyze),
        Command::Report(a) => run_one(&a, Stage::Report),
        Command::Verbatim(v) => match (v.config, v.corpus, v.variants, v.out) {
            (Some(config), None, None, None) => run_one(
                &StageArgs {
                    config,
                    force: v.force,
                    llm: None,
                    dataset: None,
                },
                Stage::Verbatim,
            ),
            (None, Some(corpus), Some(variants), Some(out)) => {
                audit(&corpus, &variants, &out, v.raw_exact, v.save_index.as_deref())
            }
            _ => Err(Error::config(
                "verbatim",
                "pass either --config, or all of --corpus, --variants and --out",
            )),
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
