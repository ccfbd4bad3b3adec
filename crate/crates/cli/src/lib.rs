//! Command line front end and HTTP service for form relaxation bundles.

pub mod server;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use formrelax_core::dataset::{
    load_instances_with, load_schema, temporal_split, DEFAULT_TIMESTAMP_COLUMN,
};
use formrelax_core::eval::run_experiment;
use formrelax_core::pipeline::{load_bundle, save_bundle, train_with_split};
use formrelax_core::{MeaninglessDictionary, ScenarioConfig, ScenarioMode, TrainConfig};

#[derive(Debug, Parser)]
#[command(
    name = "formrelax",
    version,
    about = "Learn and serve optional-field decisions for data entry forms"
)]
pub struct Cli {
    /// Log filter, e.g. `info` or `formrelax_core=debug`.
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split submissions by time, train per-field models and tune thresholds.
    Train(TrainArgs),
    /// Simulate form filling on held-out submissions and report metrics.
    Evaluate(EvaluateArgs),
    /// Decide whether fields of one partially filled form are required.
    Predict(PredictArgs),
    /// Serve the bundle over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    /// Placeholder values, one per line.
    #[arg(long)]
    pub dict: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub no_smote: bool,
    #[arg(long)]
    pub no_endorser: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = DEFAULT_TIMESTAMP_COLUMN)]
    pub timestamp_column: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scenario {
    Sequential,
    PartialRandom,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub scenario: Scenario,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Evaluate every row instead of the held-out test part.
    #[arg(long)]
    pub all_rows: bool,
    /// Also require the bundle to match this schema.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long, default_value = DEFAULT_TIMESTAMP_COLUMN)]
    pub timestamp_column: String,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// Filled values as a JSON object of field name to string.
    #[arg(long, default_value = "{}")]
    pub filled: String,
    /// Field to decide; all unfilled modelled fields when omitted.
    #[arg(long)]
    pub target: Option<String>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    /// Refuse bundles trained for a different schema.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long, default_value_t = 5000)]
    pub timeout_ms: u64,
    /// Allowed CORS origin; repeat for several. Any origin when omitted.
    #[arg(long = "cors-origin")]
    pub cors_origins: Vec<String>,
}

pub fn init_logging(filter: &str) {
    let filter = tracing_subscriber::EnvFilter::try_new(filter)
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Predict(a) => predict(a),
        Command::Serve(a) => serve(a),
    }
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    let schema =
        load_schema(&a.schema).with_context(|| format!("reading schema {}", a.schema.display()))?;
    let data = load_instances_with(&a.data, &schema, &a.timestamp_column)
        .with_context(|| format!("reading data {}", a.data.display()))?;
    let dict = match &a.dict {
        Some(p) => MeaninglessDictionary::from_file(p)
            .with_context(|| format!("reading dictionary {}", p.display()))?,
        None => MeaninglessDictionary::default(),
    };
    let cfg = TrainConfig {
        seed: a.seed,
        enable_smote: !a.no_smote,
        enable_endorser: !a.no_endorser,
        ..TrainConfig::default()
    };
    let (bundle, test) = train_with_split(&data, &dict, &cfg)?;
    save_bundle(&bundle, &a.out)?;
    println!(
        "trained {} model(s) [{}] on {} rows in {:.2} s; {} test rows held out; bundle written to {}",
        bundle.models.len(),
        cfg.variant(),
        data.len() - test.len(),
        bundle.train_seconds,
        test.len(),
        a.out.display()
    );
    for (t, m) in &bundle.models {
        println!(
            "  {t}: theta {:.2}, {} edges",
            m.theta,
            m.net.dag().edge_count()
        );
    }
    if !bundle.skipped_targets.is_empty() {
        println!(
            "  no model (single class): {}",
            bundle.skipped_targets.join(", ")
        );
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> anyhow::Result<()> {
    let pinned = a.schema.as_ref().map(load_schema).transpose()?;
    let bundle = load_bundle(&a.bundle, pinned.as_ref())
        .with_context(|| format!("loading bundle {}", a.bundle.display()))?;
    let data = load_instances_with(&a.data, &bundle.schema, &a.timestamp_column)
        .with_context(|| format!("reading data {}", a.data.display()))?;
    let test = if a.all_rows {
        data
    } else {
        temporal_split(&data, bundle.train_config.split)?.2
    };
    let scenario = ScenarioConfig {
        mode: match a.scenario {
            Scenario::Sequential => ScenarioMode::Sequential,
            Scenario::PartialRandom => ScenarioMode::PartialRandom,
        },
        seed: a.seed,
        honor_groups: true,
    };
    let report = run_experiment(&bundle, &test, &scenario)?;
    print!("{}", report.to_table());
    let json = serde_json::to_string_pretty(&report)?;
    match &a.json {
        Some(p) => std::fs::write(p, json).with_context(|| format!("writing {}", p.display()))?,
        None => println!("{json}"),
    }
    Ok(())
}

fn predict(a: PredictArgs) -> anyhow::Result<()> {
    let bundle = load_bundle(&a.bundle, None)
        .with_context(|| format!("loading bundle {}", a.bundle.display()))?;
    let filled: BTreeMap<String, String> =
        serde_json::from_str(&a.filled).context("--filled must be a JSON object of strings")?;
    let req = server::PredictRequest {
        filled,
        targets: a.target.map(|t| vec![t]),
    };
    let loaded = server::Loaded {
        generation: 1,
        bundle,
    };
    let res = server::predict_on(&loaded, req).map_err(|e| anyhow::anyhow!(e.message))?;
    println!("{}", serde_json::to_string_pretty(&res.decisions)?);
    Ok(())
}

fn serve(a: ServeArgs) -> anyhow::Result<()> {
    if a.timeout_ms == 0 {
        bail!("--timeout-ms must be positive");
    }
    let schema = a.schema.as_ref().map(load_schema).transpose()?;
    let cfg = server::ServiceConfig {
        bind: a.bind,
        bundle_path: Some(a.bundle),
        schema,
        request_timeout: Duration::from_millis(a.timeout_ms),
        cors_origins: a.cors_origins,
    };
    tokio::runtime::Runtime::new()?.block_on(server::serve(cfg))
}
