use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use tensorcast::pipeline::{Pipeline, PipelineConfig, Stage, StageError};
use tensorcast::Error;

/// Tensor decomposition and Monte Carlo forecasting of transaction activity.
#[derive(Parser)]
#[command(name = "tensorcast", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic transaction log, rate series and ground truth.
    Generate(Common),
    /// Build the tensor and slot-aligned rates from the input files.
    Ingest(Common),
    /// Non-negative CP decomposition of the ingested tensor.
    Decompose(Common),
    /// Shapiro-Wilk test on the log-ratios of each time factor.
    Normality(Common),
    /// Calibrate model parameters per rank and horizon.
    Calibrate(Common),
    /// Simulate every calibrated cell.
    Simulate(Common),
    /// Price digital claims and score them against held-out values.
    Evaluate(Common),
    /// All stages in order.
    Run(Common),
    /// Print the effective configuration as JSON.
    Config(Common),
}

#[derive(Args)]
struct Common {
    /// JSON configuration file; defaults apply when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override a config field, e.g. `--set solver.rank=3`. Values are parsed
    /// as JSON, falling back to a plain string.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

fn apply_override(root: &mut Value, spec: &str) -> Result<(), Error> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not KEY=VALUE")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let map = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {part:?} is not inside an object")))?;
        if i + 1 == parts.len() {
            map.insert((*part).to_owned(), value);
            return Ok(());
        }
        node = map.entry(*part).or_insert_with(|| Value::Object(Default::default()));
    }
    Err(Error::Config(format!("override {spec:?} has an empty key")))
}

fn load_config(c: &Common) -> Result<PipelineConfig, Error> {
    let base = match &c.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    let mut value = serde_json::to_value(&base)?;
    for spec in &c.overrides {
        apply_override(&mut value, spec)?;
    }
    if let Some(seed) = c.seed {
        apply_override(&mut value, &format!("seed={seed}"))?;
    }
    if let Some(out) = &c.output {
        value["paths"]["output"] = Value::String(out.display().to_string());
    }
    serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))
}

fn execute(command: &Command, p: &Pipeline) -> Result<String, StageError> {
    let at = |stage| move |source| StageError { stage, source };
    Ok(match command {
        Command::Generate(_) => {
            let data = p.generate()?;
            format!(
                "generated {} transactions over {} slots",
                data.records.len(),
                data.rates.len()
            )
        }
        Command::Ingest(_) => {
            let ing = p.ingest()?;
            format!("tensor {:?}, {} nonzeros", ing.tensor.dims(), ing.tensor.nonzero_count())
        }
        Command::Decompose(_) => {
            let ing = p.load_ingested().map_err(at(Stage::Decompose))?;
            let d = p.decompose(&ing.tensor)?;
            format!(
                "{} sweeps, converged={}, relative error {:.6}",
                d.trace.iterations, d.trace.converged, d.trace.final_relative_error
            )
        }
        Command::Normality(_) => {
            let f = p.load_factors().map_err(at(Stage::Normality))?;
            let rows = p.normality(&f)?;
            let passed = rows.iter().filter(|r| r.pass == Some(true)).count();
            format!("{passed}/{} time factors pass", rows.len())
        }
        Command::Calibrate(_) => {
            let f = p.load_factors().map_err(at(Stage::Calibrate))?;
            let ing = p.load_ingested().map_err(at(Stage::Calibrate))?;
            let c = p.calibrate(&f, &ing.rates)?;
            format!("{} cells calibrated, {} skipped", c.cells.len(), c.skipped.len())
        }
        Command::Simulate(_) => {
            let c = p.load_calibrated().map_err(at(Stage::Simulate))?;
            let rows = p.simulate(&c)?;
            format!("{} cells simulated", rows.len())
        }
        Command::Evaluate(_) => {
            let f = p.load_factors().map_err(at(Stage::Evaluate))?;
            let c = p.load_calibrated().map_err(at(Stage::Evaluate))?;
            summary_line(&p.evaluate(&f, &c)?)
        }
        Command::Run(_) => summary_line(&p.run()?.evaluation),
        Command::Config(_) => p.config().to_json().map_err(at(Stage::Config))?,
    })
}

fn summary_line(eval: &tensorcast::payoff::Evaluation) -> String {
    let mut parts: Vec<String> = eval
        .horizons
        .iter()
        .map(|h| format!("h={} TP {:.1}% ({} cells)", h.horizon, 100.0 * h.tp_rate, h.cells))
        .collect();
    if !eval.skipped.is_empty() {
        parts.push(format!("{} skipped", eval.skipped.len()));
    }
    parts.join("; ")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = match &cli.command {
        Command::Generate(c)
        | Command::Ingest(c)
        | Command::Decompose(c)
        | Command::Normality(c)
        | Command::Calibrate(c)
        | Command::Simulate(c)
        | Command::Evaluate(c)
        | Command::Run(c)
        | Command::Config(c) => c,
    };

    if let Some(n) = common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }

    let result = load_config(common)
        .map_err(|source| StageError {
            stage: Stage::Config,
            source,
        })
        .and_then(Pipeline::new)
        .and_then(|p| execute(&cli.command, &p));
    match result {
        Ok(message) => {
            println!("{message}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
