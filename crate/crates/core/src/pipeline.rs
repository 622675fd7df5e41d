//! End-to-end orchestration: generate or ingest, decompose, test, calibrate,
//! simulate and evaluate, with every stage writing its outputs to one
//! directory.
//!
//! Each stage can run alone, reading what earlier stages left in the output
//! directory, or all of them can run in sequence with [`Pipeline::run`]. Every
//! CSV starts with a `# config_hash=<hex> seed=<n>` line and every JSON
//! document carries `config_hash` and `seed` fields.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::calibration::{
    calibrate_all, calibrate_ou, ratio_series, shapiro_lognormal_test, CalibrationConfig, ModelParams,
};
use crate::cp::{nncp_decompose, FactorSet, FitTrace, SolverConfig};
use crate::error::{Error, ErrorKind, Result};
use crate::ingest::{
    activity_stats, build_tensor, filter_top_active, parse_rates, parse_transactions, rates_csv,
    resample_rates, transactions_csv, ActivityStats, IngestConfig,
};
use crate::payoff::{cell_sim_config, evaluate_horizons, Evaluation, EvaluationPlan};
use crate::stochastic::{simulate_coupled, SimConfig};
use crate::synthetic::{generate, GeneratorConfig, SyntheticData};
use crate::tensor::Tensor3;

pub const TRANSACTIONS_FILE: &str = "transactions.csv";
pub const RATES_FILE: &str = "rates.csv";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
pub const TENSOR_FILE: &str = "tensor.csv";
pub const SLOT_RATES_FILE: &str = "slot_rates.csv";
pub const INGEST_FILE: &str = "ingest.json";
pub const FACTORS_FILE: &str = "factors.json";
pub const TRACE_FILE: &str = "trace.json";
pub const TIME_FACTORS_FILE: &str = "time_factors.csv";
pub const NORMALITY_FILE: &str = "normality.csv";
pub const PARAMS_FILE: &str = "params.csv";
pub const PARAMS_JSON_FILE: &str = "params.json";
pub const SIMULATION_FILE: &str = "simulation.csv";
pub const DIGITAL_FILE: &str = "digital.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Transaction CSV. When absent, `run` generates synthetic data first.
    pub transactions: Option<PathBuf>,
    /// `date,rate` CSV. Defaults to the generated rate file.
    pub rates: Option<PathBuf>,
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            transactions: None,
            rates: None,
            output: PathBuf::from("out"),
        }
    }
}

/// The whole run as one JSON document.
///
/// `seed` drives the solver initialization and the Monte Carlo; the `seed`
/// fields inside `solver` and `simulation` are replaced by it. The generator
/// keeps its own seed, which identifies the synthetic data set.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    pub ingest: IngestConfig,
    pub solver: SolverConfig,
    pub calibration: CalibrationConfig,
    pub simulation: SimConfig,
    pub evaluation: EvaluationPlan,
    pub generator: GeneratorConfig,
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.ingest.validate()?;
        self.solver.validate()?;
        self.calibration.validate()?;
        self.simulation.validate()?;
        self.evaluation.validate()?;
        self.generator.validate()?;
        Ok(())
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            seed: self.seed,
            ..self.solver
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            seed: self.seed,
            ..self.simulation
        }
    }

    /// Ingestion settings in effect: the generator's grid when the data is
    /// generated, the configured ones otherwise.
    pub fn effective_ingest(&self) -> IngestConfig {
        if self.paths.transactions.is_none() {
            self.generator.ingest_config()
        } else {
            self.ingest
        }
    }

    /// SHA-256 of the configuration with file paths left out, as hex.
    pub fn config_hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(map) = &mut value {
            map.remove("paths");
        }
        let bytes = serde_json::to_vec(&value).expect("value serializes");
        Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Generate,
    Ingest,
    Decompose,
    Normality,
    Calibrate,
    Simulate,
    Evaluate,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Config => "config",
            Stage::Generate => "generate",
            Stage::Ingest => "ingest",
            Stage::Decompose => "decompose",
            Stage::Normality => "normality",
            Stage::Calibrate => "calibrate",
            Stage::Simulate => "simulate",
            Stage::Evaluate => "evaluate",
        };
        f.write_str(name)
    }
}

#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub source: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage failed: {}", self.stage, self.source)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

impl StageError {
    pub fn kind(&self) -> ErrorKind {
        self.source.kind()
    }

    /// 2 for configuration errors, 3 for data errors, 4 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numerical => 4,
        }
    }
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, StageError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub tensor: Tensor3,
    /// One rate per slot.
    pub rates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposed {
    pub factors: FactorSet,
    pub trace: FitTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityRow {
    pub rank: usize,
    pub n: usize,
    pub dropped: usize,
    pub w: Option<f64>,
    pub p_value: Option<f64>,
    pub alpha: f64,
    pub pass: Option<bool>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsCell {
    pub rank: usize,
    pub horizon: usize,
    pub train_len: usize,
    pub params: ModelParams,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Calibrated {
    pub cells: Vec<ParamsCell>,
    pub skipped: Vec<String>,
}

impl Calibrated {
    pub fn by_cell(&self) -> BTreeMap<(usize, usize), ModelParams> {
        self.cells.iter().map(|c| ((c.rank, c.horizon), c.params)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRow {
    pub rank: usize,
    pub horizon: usize,
    pub n_paths: usize,
    pub n_steps: usize,
    pub mean_terminal: f64,
    pub absorbed: usize,
}

/// Everything a full run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub ingested: Ingested,
    pub decomposed: Decomposed,
    pub normality: Vec<NormalityRow>,
    pub calibrated: Calibrated,
    pub simulation: Vec<SimulationRow>,
    pub evaluation: Evaluation,
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub struct Pipeline {
    cfg: PipelineConfig,
    hash: String,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self, StageError> {
        cfg.validate().at(Stage::Config)?;
        let hash = cfg.config_hash();
        Ok(Self { cfg, hash })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn output_dir(&self) -> &Path {
        &self.cfg.paths.output
    }

    pub fn output(&self, name: &str) -> PathBuf {
        self.cfg.paths.output.join(name)
    }

    fn header(&self) -> String {
        format!("# config_hash={} seed={}\n", self.hash, self.cfg.seed)
    }

    fn stamp(&self, body: Value) -> Value {
        json!({
            "config_hash": self.hash,
            "seed": self.cfg.seed,
            "data": body,
        })
    }

    fn write(&self, name: &str, contents: &str) -> Result<()> {
        let dir = self.output_dir();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = self.output(name);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))
    }

    fn write_csv(&self, name: &str, body: &str) -> Result<()> {
        self.write(name, &format!("{}{body}", self.header()))
    }

    fn write_json(&self, name: &str, body: Value) -> Result<()> {
        let mut text = serde_json::to_string_pretty(&self.stamp(body))?;
        text.push('\n');
        self.write(name, &text)
    }

    fn read_json_data(&self, name: &str) -> Result<Value> {
        let mut v: Value = serde_json::from_str(&read_to_string(&self.output(name))?)?;
        v.get_mut("data")
            .map(Value::take)
            .ok_or_else(|| Error::InvalidInput(format!("{name} has no data field")))
    }

    fn transactions_path(&self) -> PathBuf {
        self.cfg
            .paths
            .transactions
            .clone()
            .unwrap_or_else(|| self.output(TRANSACTIONS_FILE))
    }

    fn rates_path(&self) -> PathBuf {
        self.cfg.paths.rates.clone().unwrap_or_else(|| self.output(RATES_FILE))
    }

    /// Writes a synthetic transaction log, its rate series and the planted
    /// ground truth.
    pub fn generate(&self) -> Result<SyntheticData, StageError> {
        let stage = Stage::Generate;
        let data = generate(&self.cfg.generator).at(stage)?;
        let grid = self.cfg.generator.ingest_config();
        self.write_csv(TRANSACTIONS_FILE, &transactions_csv(&data.records))
            .at(stage)?;
        self.write_csv(RATES_FILE, &rates_csv(&data.rates, &grid)).at(stage)?;
        self.write_json(GROUND_TRUTH_FILE, serde_json::to_value(&data.truth).at_json(stage)?)
            .at(stage)?;
        Ok(data)
    }

    /// Filters the transaction log, builds the tensor and aligns the rates
    /// with its slots.
    pub fn ingest(&self) -> Result<Ingested, StageError> {
        let stage = Stage::Ingest;
        let icfg = self.cfg.effective_ingest();
        let tx_path = self.transactions_path();
        let file = fs::File::open(&tx_path).map_err(|e| Error::io(&tx_path, e)).at(stage)?;
        let parsed = parse_transactions(BufReader::new(file)).at(stage)?;
        let raw_stats = activity_stats(&parsed.records);
        let (kept, index) = filter_top_active(&parsed.records, &icfg).at(stage)?;
        let kept_stats: ActivityStats = activity_stats(&kept);
        let built = build_tensor(&kept, &index, &icfg).at(stage)?;

        let rates_path = self.rates_path();
        let text = read_to_string(&rates_path).at(stage)?;
        let rates = resample_rates(&parse_rates(text.as_bytes()).at(stage)?, &icfg).at(stage)?;

        self.write_csv(TENSOR_FILE, &built.tensor.to_sparse_csv()).at(stage)?;
        self.write_csv(SLOT_RATES_FILE, &rates_csv(&rates, &icfg)).at(stage)?;
        self.write_json(
            INGEST_FILE,
            json!({
                "ingest": icfg,
                "dims": built.tensor.dims(),
                "rejected_negative": parsed.rejected,
                "out_of_window": built.out_of_window,
                "all_records": raw_stats,
                "retained_records": kept_stats,
                "tensor_sum": built.tensor.sum(),
                "nonzeros": built.tensor.nonzero_count(),
                "senders": index.senders,
                "receivers": index.receivers,
            }),
        )
        .at(stage)?;
        Ok(Ingested {
            tensor: built.tensor,
            rates,
        })
    }

    /// Reads the outputs of [`Pipeline::ingest`] back from the output directory.
    pub fn load_ingested(&self) -> Result<Ingested> {
        let tensor_path = self.output(TENSOR_FILE);
        let file = fs::File::open(&tensor_path).map_err(|e| Error::io(&tensor_path, e))?;
        let tensor = Tensor3::from_sparse_csv(BufReader::new(file))?;
        let obs = parse_rates(read_to_string(&self.output(SLOT_RATES_FILE))?.as_bytes())?;
        let rates = resample_rates(&obs, &self.cfg.effective_ingest())?;
        if rates.len() != tensor.dims()[2] {
            return Err(Error::DimensionMismatch(format!(
                "{} slot rates for a tensor with {} slots",
                rates.len(),
                tensor.dims()[2]
            )));
        }
        Ok(Ingested { tensor, rates })
    }

    pub fn decompose(&self, tensor: &Tensor3) -> Result<Decomposed, StageError> {
        let stage = Stage::Decompose;
        let (factors, trace) = nncp_decompose(tensor, &self.cfg.solver_config()).at(stage)?;
        self.write_json(FACTORS_FILE, serde_json::to_value(&factors).at_json(stage)?)
            .at(stage)?;
        self.write_json(TRACE_FILE, serde_json::to_value(&trace).at_json(stage)?)
            .at(stage)?;

        let c = factors.c();
        let mut csv = String::from("slot");
        for r in 1..=factors.rank() {
            let _ = write!(csv, ",c{r}");
        }
        csv.push('\n');
        for k in 0..c.rows() {
            let _ = write!(csv, "{k}");
            for v in c.row(k) {
                let _ = write!(csv, ",{v}");
            }
            csv.push('\n');
        }
        self.write_csv(TIME_FACTORS_FILE, &csv).at(stage)?;
        Ok(Decomposed { factors, trace })
    }

    pub fn load_factors(&self) -> Result<FactorSet> {
        Ok(serde_json::from_value(self.read_json_data(FACTORS_FILE)?)?)
    }

    fn ranks(&self, factors: &FactorSet) -> Vec<usize> {
        let wanted = &self.cfg.evaluation.ranks;
        (1..=factors.rank())
            .filter(|r| wanted.is_empty() || wanted.contains(r))
            .collect()
    }

    /// Shapiro–Wilk on the log-ratios of every time factor.
    pub fn normality(&self, factors: &FactorSet) -> Result<Vec<NormalityRow>, StageError> {
        let stage = Stage::Normality;
        let alpha = self.cfg.calibration.alpha;
        let mut rows = Vec::new();
        for rank in self.ranks(factors) {
            let series = factors.time_factor(rank).at(stage)?;
            let row = match ratio_series(&series, self.cfg.calibration.guard)
                .and_then(|r| Ok((r.dropped(), shapiro_lognormal_test(&r, alpha)?)))
            {
                Ok((dropped, t)) => NormalityRow {
                    rank,
                    n: t.n,
                    dropped,
                    w: Some(t.w),
                    p_value: Some(t.p_value),
                    alpha,
                    pass: Some(t.pass),
                    note: None,
                },
                Err(e) => NormalityRow {
                    rank,
                    n: 0,
                    dropped: 0,
                    w: None,
                    p_value: None,
                    alpha,
                    pass: None,
                    note: Some(e.to_string()),
                },
            };
            rows.push(row);
        }
        let mut csv = String::from("rank,n,dropped,w,p_value,alpha,pass\n");
        for r in &rows {
            let pass = match r.pass {
                Some(true) => "pass",
                Some(false) => "fail",
                None => "error",
            };
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{pass}",
                r.rank,
                r.n,
                r.dropped,
                opt(r.w),
                opt(r.p_value),
                r.alpha
            );
        }
        self.write_csv(NORMALITY_FILE, &csv).at(stage)?;
        Ok(rows)
    }

    /// Parameters for every `(rank, horizon)` cell, each fitted on the slots
    /// before the horizon's hold-out.
    ///
    /// A rate series that cannot be calibrated fails the stage; a time
    /// factor that cannot be calibrated only skips its cells.
    pub fn calibrate(&self, factors: &FactorSet, rates: &[f64]) -> Result<Calibrated, StageError> {
        let stage = Stage::Calibrate;
        let slots = factors.dims()[2];
        if rates.len() != slots {
            return Err(Error::DimensionMismatch(format!(
                "{} slot rates for {slots} time-factor slots",
                rates.len()
            )))
            .at(stage);
        }
        let mut out = Calibrated::default();
        for &horizon in &self.cfg.evaluation.horizons {
            let Some(train) = EvaluationPlan::train_len(slots, horizon) else {
                out.skipped
                    .push(format!("horizon {horizon}: {slots} slots leave too short a training prefix"));
                continue;
            };
            calibrate_ou(&rates[..train], self.cfg.calibration.dt)
                .map_err(|e| Error::Calibration {
                    parameter: "rates",
                    message: format!("horizon {horizon}: {e}"),
                })
                .at(stage)?;
            for rank in self.ranks(factors) {
                let series = factors.time_factor(rank).at(stage)?;
                match calibrate_all(&series[..train], &rates[..train], &self.cfg.calibration) {
                    Ok(params) => out.cells.push(ParamsCell {
                        rank,
                        horizon,
                        train_len: train,
                        params,
                    }),
                    Err(e) => out.skipped.push(format!("rank {rank} horizon {horizon}: {e}")),
                }
            }
        }

        let mut csv = String::from("rank,horizon,train_len,sigma_s,lambda,kappa,sigma_mu,rho,s0,mu0\n");
        for c in &out.cells {
            let p = &c.params;
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{},{},{},{}",
                c.rank, c.horizon, c.train_len, p.sigma_s, p.lambda, p.kappa, p.sigma_mu, p.rho, p.s0, p.mu0
            );
        }
        self.write_csv(PARAMS_FILE, &csv).at(stage)?;
        self.write_json(PARAMS_JSON_FILE, serde_json::to_value(&out).at_json(stage)?)
            .at(stage)?;
        Ok(out)
    }

    pub fn load_calibrated(&self) -> Result<Calibrated> {
        Ok(serde_json::from_value(self.read_json_data(PARAMS_JSON_FILE)?)?)
    }

    /// Runs the forecast simulation of every calibrated cell and records
    /// terminal-value diagnostics.
    pub fn simulate(&self, calibrated: &Calibrated) -> Result<Vec<SimulationRow>, StageError> {
        let stage = Stage::Simulate;
        let sim = self.cfg.sim_config();
        let mut rows = Vec::new();
        for c in &calibrated.cells {
            let cfg = cell_sim_config(&sim, c.rank, c.horizon);
            let bundle = simulate_coupled(&c.params, &cfg).at(stage)?;
            rows.push(SimulationRow {
                rank: c.rank,
                horizon: c.horizon,
                n_paths: cfg.n_paths,
                n_steps: cfg.n_steps,
                mean_terminal: bundle.mean_terminal(),
                absorbed: bundle.absorbed,
            });
        }
        let mut csv = String::from("rank,horizon,n_paths,n_steps,mean_terminal,absorbed\n");
        for r in &rows {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{}",
                r.rank, r.horizon, r.n_paths, r.n_steps, r.mean_terminal, r.absorbed
            );
        }
        self.write_csv(SIMULATION_FILE, &csv).at(stage)?;
        Ok(rows)
    }

    /// Prices the digital claims of the evaluation plan and scores them
    /// against the held-out values.
    pub fn evaluate(&self, factors: &FactorSet, calibrated: &Calibrated) -> Result<Evaluation, StageError> {
        let stage = Stage::Evaluate;
        let series = self
            .ranks(factors)
            .into_iter()
            .map(|r| Ok((r, factors.time_factor(r)?)))
            .collect::<Result<Vec<_>>>()
            .at(stage)?;
        let mut eval = evaluate_horizons(
            &series,
            &calibrated.by_cell(),
            &self.cfg.evaluation,
            &self.cfg.sim_config(),
        )
        .at(stage)?;
        eval.skipped.extend(calibrated.skipped.iter().cloned());
        self.write_csv(DIGITAL_FILE, &eval.reports_csv()).at(stage)?;
        self.write_json(
            SUMMARY_FILE,
            json!({
                "cells": eval.reports.len(),
                "horizons": eval.horizons,
                "skipped": eval.skipped,
            }),
        )
        .at(stage)?;
        Ok(eval)
    }

    /// Every stage in order. Outputs of completed stages stay on disk when a
    /// later stage fails.
    pub fn run(&self) -> Result<RunReport, StageError> {
        if self.cfg.paths.transactions.is_none() {
            self.generate()?;
        }
        let ingested = self.ingest()?;
        let decomposed = self.decompose(&ingested.tensor)?;
        let normality = self.normality(&decomposed.factors)?;
        let calibrated = self.calibrate(&decomposed.factors, &ingested.rates)?;
        let simulation = self.simulate(&calibrated)?;
        let evaluation = self.evaluate(&decomposed.factors, &calibrated)?;
        Ok(RunReport {
            ingested,
            decomposed,
            normality,
            calibrated,
            simulation,
            evaluation,
        })
    }
}

trait JsonAt<T> {
    fn at_json(self, stage: Stage) -> Result<T, StageError>;
}

impl<T> JsonAt<T> for std::result::Result<T, serde_json::Error> {
    fn at_json(self, stage: Stage) -> Result<T, StageError> {
        self.map_err(Error::from).at(stage)
    }
}
