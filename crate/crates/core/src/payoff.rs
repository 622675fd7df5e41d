//! Digital payoff `1{S_T >= K}` over simulated terminals and the hit/miss
//! bookkeeping against realized series.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::calibration::ModelParams;
use crate::error::{Error, Result};
use crate::rng::mix_seed;
use crate::stochastic::{simulate_coupled, SimConfig};

/// Monte Carlo probability that the terminal is at least `strike`, with its
/// binomial standard error.
pub fn digital_value(terminals: &[f64], strike: f64) -> Result<(f64, f64)> {
    if terminals.is_empty() {
        return Err(Error::InvalidInput("digital value needs at least one terminal".into()));
    }
    let n = terminals.len() as f64;
    let hits = terminals.iter().filter(|s| **s >= strike).count() as f64;
    let p = hits / n;
    Ok((p, (p * (1.0 - p) / n).sqrt()))
}

/// Two-way label: a prediction either agrees with what happened or not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "TP")]
    TruePositive,
    #[serde(rename = "FP")]
    FalsePositive,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::TruePositive => "TP",
            Label::FalsePositive => "FP",
        }
    }
}

/// `TP` when a probability at or above `threshold` meets a realized exchange,
/// or a probability below it meets none; `FP` otherwise.
pub fn classify(probability: f64, threshold: f64, actual: bool) -> Label {
    if (probability >= threshold) == actual {
        Label::TruePositive
    } else {
        Label::FalsePositive
    }
}

/// Standard 2x2 confusion counts, with "predicted" meaning
/// `probability >= threshold`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub true_positive: usize,
    pub false_positive: usize,
    pub true_negative: usize,
    pub false_negative: usize,
}

impl Confusion {
    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.true_positive += 1,
            (true, false) => self.false_positive += 1,
            (false, false) => self.true_negative += 1,
            (false, true) => self.false_negative += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.true_positive + self.false_positive + self.true_negative + self.false_negative
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DigitalSpec {
    pub rank: usize,
    pub horizon: usize,
    pub strike: f64,
    pub threshold: f64,
}

impl DigitalSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.strike > 0.0 && self.strike.is_finite()) {
            return Err(Error::Config(format!("strike must be positive, got {}", self.strike)));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!(
                "threshold must be in (0, 1), got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DigitalReport {
    pub spec: DigitalSpec,
    pub probability: f64,
    pub std_err: f64,
    pub s0: f64,
    pub actual_value: f64,
    pub actual_indicator: bool,
    pub label: Label,
}

impl DigitalReport {
    /// Builds a report and derives the indicator and label from the inputs.
    pub fn new(spec: DigitalSpec, probability: f64, std_err: f64, s0: f64, actual_value: f64) -> Self {
        let actual_indicator = actual_value >= spec.strike;
        Self {
            spec,
            probability,
            std_err,
            s0,
            actual_value,
            actual_indicator,
            label: classify(probability, spec.threshold, actual_indicator),
        }
    }
}

/// How strike levels in an evaluation plan are interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum StrikeMode {
    /// Strikes are levels of the time factor.
    Absolute,
    /// Strikes are multiples of the level at the start of the forecast.
    #[default]
    Relative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationPlan {
    /// Forecast horizons in slots; each is held out from the end of the series.
    pub horizons: Vec<usize>,
    pub strikes: Vec<f64>,
    pub strike_mode: StrikeMode,
    pub threshold: f64,
    /// 1-based ranks to evaluate; empty means all.
    pub ranks: Vec<usize>,
}

impl Default for EvaluationPlan {
    fn default() -> Self {
        Self {
            horizons: vec![5, 10, 26],
            strikes: vec![0.5, 0.67, 1.5, 2.0],
            strike_mode: StrikeMode::Relative,
            threshold: 0.60,
            ranks: Vec::new(),
        }
    }
}

impl EvaluationPlan {
    pub fn validate(&self) -> Result<()> {
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(Error::Config("horizons must be non-empty and positive".into()));
        }
        if self.strikes.is_empty() || self.strikes.iter().any(|k| !(*k > 0.0 && k.is_finite())) {
            return Err(Error::Config("strikes must be non-empty and positive".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!(
                "threshold must be in (0, 1), got {}",
                self.threshold
            )));
        }
        if self.ranks.contains(&0) {
            return Err(Error::Config("ranks are 1-based".into()));
        }
        Ok(())
    }

    /// Slots used for calibration when forecasting `horizon` slots ahead of
    /// the end of a series of length `len`.
    pub fn train_len(len: usize, horizon: usize) -> Option<usize> {
        len.checked_sub(horizon).filter(|n| *n >= 3)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonSummary {
    pub horizon: usize,
    pub cells: usize,
    pub true_positive: usize,
    pub false_positive: usize,
    pub tp_rate: f64,
    pub fp_rate: f64,
    pub confusion: Confusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub reports: Vec<DigitalReport>,
    pub horizons: Vec<HorizonSummary>,
    /// Cells that could not be evaluated, with the reason.
    pub skipped: Vec<String>,
}

impl Evaluation {
    pub fn summary(&self, horizon: usize) -> Option<&HorizonSummary> {
        self.horizons.iter().find(|h| h.horizon == horizon)
    }

    /// `rank,horizon,strike,probability,std_err,actual_value,actual_indicator,label`
    pub fn reports_csv(&self) -> String {
        let mut out =
            String::from("rank,horizon,strike,probability,std_err,actual_value,actual_indicator,label\n");
        for r in &self.reports {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.spec.rank,
                r.spec.horizon,
                r.spec.strike,
                r.probability,
                r.std_err,
                r.actual_value,
                u8::from(r.actual_indicator),
                r.label.as_str()
            );
        }
        out
    }
}

/// Summarizes reports per horizon, in ascending horizon order.
pub fn summarize(reports: &[DigitalReport]) -> Vec<HorizonSummary> {
    let mut by_h: BTreeMap<usize, HorizonSummary> = BTreeMap::new();
    for r in reports {
        let s = by_h.entry(r.spec.horizon).or_insert_with(|| HorizonSummary {
            horizon: r.spec.horizon,
            cells: 0,
            true_positive: 0,
            false_positive: 0,
            tp_rate: 0.0,
            fp_rate: 0.0,
            confusion: Confusion::default(),
        });
        s.cells += 1;
        match r.label {
            Label::TruePositive => s.true_positive += 1,
            Label::FalsePositive => s.false_positive += 1,
        }
        s.confusion
            .record(r.probability >= r.spec.threshold, r.actual_indicator);
    }
    by_h.into_values()
        .map(|mut s| {
            s.tp_rate = s.true_positive as f64 / s.cells as f64;
            s.fp_rate = s.false_positive as f64 / s.cells as f64;
            s
        })
        .collect()
}

/// Seed for the simulation behind one `(rank, horizon)` cell.
pub fn cell_seed(seed: u64, rank: usize, horizon: usize) -> u64 {
    mix_seed(seed, ((rank as u64) << 32) | horizon as u64)
}

/// Simulation settings for one `(rank, horizon)` cell: enough steps of
/// `sim.dt` to cover `horizon` slots, and a seed derived from the cell.
pub fn cell_sim_config(sim: &SimConfig, rank: usize, horizon: usize) -> SimConfig {
    SimConfig {
        n_steps: ((horizon as f64) / sim.dt).round().max(1.0) as usize,
        seed: cell_seed(sim.seed, rank, horizon),
        record_paths: false,
        ..*sim
    }
}

/// Forecasts every `(rank, horizon, strike)` cell of `plan`.
///
/// `series` holds `(rank, time factor)` pairs. `params` maps
/// `(rank, horizon)` to parameters calibrated on the first
/// `len - horizon` slots; a missing entry skips the cell. Each cell starts
/// from the last training value, simulates `horizon` slots and compares the
/// digital probability with the realized final value.
pub fn evaluate_horizons(
    series: &[(usize, Vec<f64>)],
    params: &BTreeMap<(usize, usize), ModelParams>,
    plan: &EvaluationPlan,
    sim: &SimConfig,
) -> Result<Evaluation> {
    plan.validate()?;
    sim.validate()?;
    let mut reports = Vec::new();
    let mut skipped = Vec::new();

    for (rank, values) in series {
        if !plan.ranks.is_empty() && !plan.ranks.contains(rank) {
            continue;
        }
        for &horizon in &plan.horizons {
            let Some(train) = EvaluationPlan::train_len(values.len(), horizon) else {
                skipped.push(format!(
                    "rank {rank} horizon {horizon}: series of {} slots is too short",
                    values.len()
                ));
                continue;
            };
            let Some(p) = params.get(&(*rank, horizon)) else {
                skipped.push(format!("rank {rank} horizon {horizon}: no calibrated parameters"));
                continue;
            };
            let s0 = values[train - 1];
            let actual = values[values.len() - 1];
            let cfg = cell_sim_config(sim, *rank, horizon);
            let start = ModelParams { s0, ..*p };
            let bundle = match simulate_coupled(&start, &cfg) {
                Ok(b) => b,
                Err(e) => {
                    skipped.push(format!("rank {rank} horizon {horizon}: {e}"));
                    continue;
                }
            };
            for &k in &plan.strikes {
                let strike = match plan.strike_mode {
                    StrikeMode::Absolute => k,
                    StrikeMode::Relative => k * s0,
                };
                let spec = DigitalSpec {
                    rank: *rank,
                    horizon,
                    strike,
                    threshold: plan.threshold,
                };
                let (prob, se) = digital_value(&bundle.terminals, strike)?;
                reports.push(DigitalReport::new(spec, prob, se, s0, actual));
            }
        }
    }
    let horizons = summarize(&reports);
    Ok(Evaluation {
        reports,
        horizons,
        skipped,
    })
}
