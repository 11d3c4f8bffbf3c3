use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use recsys_dan::config::RunConfig;
use recsys_dan::data::Split;
use recsys_dan::diagnostics::{gradient_suite, SuiteCheck};
use recsys_dan::models::Domain;
use recsys_dan::pipeline::{self, EvalOptions, PredictItem};
use recsys_dan::Error;

#[derive(Parser, Debug)]
#[command(name = "recsys-dan", version, about = "Adversarial domain adaptation for cross-domain rating prediction")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory holding every artifact.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Input field naming: canonical or amazon.
    #[arg(long, global = true)]
    schema: Option<String>,
    /// ui, u, i or h.
    #[arg(long, global = true)]
    variant: Option<String>,
    /// text or visual.
    #[arg(long, global = true)]
    modality: Option<String>,
    /// Extra `key=value` overrides applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Normalizes one review file to the canonical schema.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Builds a vocabulary over review files.
    Vocab {
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Splits and aligns a source and a target review file.
    Pair {
        #[arg(long)]
        source: Option<PathBuf>,
        #[arg(long)]
        target: Option<PathBuf>,
    },
    /// Writes a synthetic domain pair and its sealed target labels.
    Synth,
    /// Supervised training of the source generators and scoring head.
    TrainSource,
    /// Adversarial adaptation of the target generators.
    Adapt,
    /// User- and item-level fine-tuning on shared objects.
    Finetune,
    /// Prints RMSE and MAE as JSON.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value = "target")]
        domain: String,
        /// Scores the unadapted source generators.
        #[arg(long)]
        source_only: bool,
        /// Scores draws from a Normal fitted to the source ratings instead.
        #[arg(long)]
        normal_baseline: bool,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Rates one user text against one item.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        user_text: String,
        #[arg(long, conflicts_with = "item_features", required_unless_present = "item_features")]
        item_text: Option<String>,
        /// Comma-separated feature values.
        #[arg(long)]
        item_features: Option<String>,
        #[arg(long, default_value = "target")]
        domain: String,
    },
    /// Runs the finite-difference gradient suite.
    Gradcheck,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Data(_) | Error::Dimension(_) | Error::Domain(_) => 2,
        Error::State(_) | Error::Config(_) | Error::Argument(_) => 3,
        Error::Training(_) => 4,
    }
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::Io { .. } => "io",
        Error::Data(_) => "data",
        Error::Dimension(_) => "dimension",
        Error::Domain(_) => "domain",
        Error::State(_) => "phase-order",
        Error::Config(_) => "config",
        Error::Argument(_) => "argument",
        Error::Training(_) => "divergence",
    }
}

fn report_error(kind: &str, message: &str, code: u8) -> ExitCode {
    let line = json!({ "error": kind, "message": message.replace('\n', " "), "exit_code": code });
    eprintln!("{line}");
    ExitCode::from(code)
}

fn parse_split(s: &str) -> recsys_dan::Result<Split> {
    Split::ALL
        .into_iter()
        .find(|sp| sp.as_str() == s)
        .ok_or_else(|| Error::Config(format!("unknown split {s:?}; use train, valid or test")))
}

fn parse_domain(s: &str) -> recsys_dan::Result<Domain> {
    match s {
        "source" => Ok(Domain::Source),
        "target" => Ok(Domain::Target),
        other => Err(Error::Config(format!("unknown domain {other:?}; use source or target"))),
    }
}

fn run_config(g: &GlobalArgs) -> recsys_dan::Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    if let Some(out) = &g.out {
        cfg.out = out.clone();
    }
    for (key, value) in [("schema", &g.schema), ("variant", &g.variant), ("modality", &g.modality)] {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    for kv in &g.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v)?;
    }
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(value: &T) -> recsys_dan::Result<()> {
    println!("{}", serde_json::to_string(value).map_err(|e| Error::Data(e.to_string()))?);
    Ok(())
}

fn print_suite(suite: &[SuiteCheck]) -> bool {
    for c in suite {
        println!(
            "{} {:<36} max_rel={:.3e}",
            if c.passed() { "PASS" } else { "FAIL" },
            c.name,
            c.report.max_rel_error()
        );
    }
    suite.iter().all(SuiteCheck::passed)
}

fn run(cli: Cli) -> recsys_dan::Result<ExitCode> {
    let mut cfg = run_config(&cli.global)?;
    match cli.command {
        Command::Ingest { input, output } => print_json(&pipeline::run_ingest(&cfg, &input, &output)?)?,
        Command::Vocab { inputs } => {
            let vocab = pipeline::run_vocab(&cfg, &inputs)?;
            print_json(&json!({ "tokens": vocab.len(), "min_count": vocab.min_count() }))?;
        }
        Command::Pair { source, target } => {
            cfg.source = source.or(cfg.source);
            cfg.target = target.or(cfg.target);
            let ds = pipeline::run_pair(&cfg)?;
            print_json(&json!({
                "vocab_size": ds.vocab.len(),
                "shared_users": ds.shared_users.len(),
                "shared_items": ds.shared_items.len(),
                "source_train": ds.source.split(Split::Train).len(),
                "target_train": ds.target.split(Split::Train).len(),
            }))?;
        }
        Command::Synth => print_json(&pipeline::run_synth(&cfg)?)?,
        Command::TrainSource => print_json(&pipeline::run_train_source(&cfg)?)?,
        Command::Adapt => {
            let out = pipeline::run_adapt(&cfg)?;
            let last = out.final_stats();
            print_json(&json!({
                "epochs_run": out.epochs_run,
                "converged": out.converged,
                "initial": out.initial,
                "final": last,
            }))?;
        }
        Command::Finetune => print_json(&pipeline::run_finetune(&cfg)?)?,
        Command::Eval { checkpoint, split, domain, source_only, normal_baseline, labels, features } => {
            cfg.labels = labels.or(cfg.labels);
            cfg.features = features.or(cfg.features);
            let (split, domain) = (parse_split(&split)?, parse_domain(&domain)?);
            if normal_baseline {
                print_json(&pipeline::run_baseline(&cfg, domain, split)?)?;
            } else {
                let opts = EvalOptions { checkpoint, domain, split, source_only };
                print_json(&pipeline::run_eval(&cfg, &opts)?)?;
            }
        }
        Command::Predict { checkpoint, user_text, item_text, item_features, domain } => {
            let item = match (item_text, item_features) {
                (Some(t), _) => PredictItem::Text(t),
                (None, Some(f)) => PredictItem::Features(
                    f.split(',')
                        .map(|v| v.trim().parse().map_err(|_| Error::Data(format!("invalid feature value {v:?}"))))
                        .collect::<recsys_dan::Result<_>>()?,
                ),
                (None, None) => return Err(Error::Config("predict needs --item-text or --item-features".into())),
            };
            let rating = pipeline::run_predict(&checkpoint, parse_domain(&domain)?, &user_text, &item)?;
            println!("{rating:?}");
        }
        Command::Gradcheck => {
            if !print_suite(&gradient_suite(cfg.train.seed)?) {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            e.exit()
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            return report_error("usage", first, 3);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => report_error(kind(&e), &e.to_string(), exit_code(&e)),
    }
}
