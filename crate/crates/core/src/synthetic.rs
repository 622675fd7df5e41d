//! Seeded transaction logs with planted community structure.
//!
//! Senders and receivers are split into `communities` contiguous blocks, and
//! community `r` trades only inside its own pair of blocks, picking accounts
//! by a power law over their position in the block. Its activity level
//! `S_r(t)` follows the coupled model around one shared drift path `mu(t)`,
//! which is also emitted as the rate series.
//!
//! Each community issues the same total number of transactions over the
//! window, spread over slots in proportion to `S_r(t)`. The expected tensor
//! is therefore exactly rank `communities` with time factors proportional to
//! `S_r`, and its blocks carry comparable volume, which keeps the CP solver
//! from spending several components on one dominant block.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::ModelParams;
use crate::error::{Error, Result};
use crate::ingest::{
    IngestConfig, TransactionRecord, DEFAULT_SLOT_SECS, DEFAULT_WINDOW_START,
};
use crate::rng::{mix_seed, NormalPairs};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub senders: usize,
    pub receivers: usize,
    pub slots: usize,
    pub slot_duration_secs: i64,
    pub window_start: i64,
    pub communities: usize,
    /// Target number of transactions before coverage top-ups.
    pub transactions: usize,
    pub mean_amount: f64,
    /// Standard deviation of log amounts.
    pub amount_log_sigma: f64,
    /// The `i`-th account of a block is picked with weight `(i + 1)^-activity_exponent`.
    pub activity_exponent: f64,
    /// Ground-truth dynamics; `s0` and `mu0` are the values at slot 0.
    pub dynamics: ModelParams,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            senders: 459,
            receivers: 813,
            slots: 52,
            slot_duration_secs: DEFAULT_SLOT_SECS,
            window_start: DEFAULT_WINDOW_START,
            communities: 5,
            transactions: 100_000,
            mean_amount: 76.0,
            amount_log_sigma: 0.5,
            activity_exponent: 1.0,
            dynamics: ModelParams {
                sigma_s: 0.10,
                lambda: 0.25,
                kappa: -0.0011,
                sigma_mu: 0.002,
                rho: -0.25,
                s0: 1.0,
                mu0: -0.0011,
            },
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.communities == 0 {
            return bad("communities must be at least 1".into());
        }
        if self.senders < self.communities || self.receivers < self.communities {
            return bad(format!(
                "need at least one sender and receiver per community, got {}x{} for {} communities",
                self.senders, self.receivers, self.communities
            ));
        }
        if self.slots < 2 {
            return bad("slots must be at least 2".into());
        }
        if self.slot_duration_secs <= 0 {
            return bad("slot_duration_secs must be positive".into());
        }
        if self.transactions == 0 {
            return bad("transactions must be at least 1".into());
        }
        if !(self.mean_amount > 0.0 && self.mean_amount.is_finite()) {
            return bad(format!("mean_amount must be positive, got {}", self.mean_amount));
        }
        if !(self.amount_log_sigma >= 0.0 && self.amount_log_sigma.is_finite()) {
            return bad("amount_log_sigma must be finite and non-negative".into());
        }
        if !(self.activity_exponent >= 0.0 && self.activity_exponent.is_finite()) {
            return bad("activity_exponent must be finite and non-negative".into());
        }
        self.dynamics.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.dynamics.s0 <= 0.0 {
            return bad("dynamics.s0 must be positive".into());
        }
        Ok(())
    }

    pub fn window_end(&self) -> i64 {
        self.window_start + self.slots as i64 * self.slot_duration_secs
    }

    /// Ingestion settings that keep every generated account and slot.
    pub fn ingest_config(&self) -> IngestConfig {
        IngestConfig {
            slot_duration_secs: self.slot_duration_secs,
            activity_quantile: 1.0,
            window_start: self.window_start,
            window_end: self.window_end(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: GeneratorConfig,
    /// `activity[r][t]`: planted level of community `r` in slot `t`.
    pub activity: Vec<Vec<f64>>,
    /// Drift path, one value per slot.
    pub rates: Vec<f64>,
    /// `sender_strength[r][i]`: membership of sender `i` in community `r`.
    pub sender_strength: Vec<Vec<f64>>,
    pub receiver_strength: Vec<Vec<f64>>,
    pub transactions: usize,
    pub mean_amount: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub records: Vec<TransactionRecord>,
    pub rates: Vec<f64>,
    pub truth: GroundTruth,
}

/// `strength[r][i]` for `n` accounts split into `communities` blocks.
fn memberships(n: usize, communities: usize, exponent: f64) -> Vec<Vec<f64>> {
    (0..communities)
        .map(|r| {
            let (lo, hi) = (r * n / communities, (r + 1) * n / communities);
            (0..n)
                .map(|i| {
                    if (lo..hi).contains(&i) {
                        ((i - lo + 1) as f64).powf(-exponent)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// Community levels and the shared drift, one Euler step per slot.
fn plant_dynamics(cfg: &GeneratorConfig) -> (Vec<Vec<f64>>, Vec<f64>) {
    let p = &cfg.dynamics;
    let seed = mix_seed(cfg.seed, 1);
    let mut drift_draws = NormalPairs::new(seed, 0);
    let mut draws: Vec<NormalPairs> = (0..cfg.communities)
        .map(|r| NormalPairs::new(seed, r as u64 + 1))
        .collect();
    let rho_perp = (1.0 - p.rho * p.rho).sqrt();

    let mut mu = vec![p.mu0; cfg.slots];
    let mut activity = vec![vec![p.s0; cfg.slots]; cfg.communities];
    for t in 1..cfg.slots {
        let (z_mu, _) = drift_draws.next_pair();
        let mu_prev = mu[t - 1];
        mu[t] = mu_prev + p.lambda * (p.kappa - mu_prev) + p.sigma_mu * z_mu;
        for (level, rng) in activity.iter_mut().zip(&mut draws) {
            let (e, _) = rng.next_pair();
            let z1 = p.rho * z_mu + rho_perp * e;
            level[t] = (level[t - 1] * (1.0 + mu_prev + p.sigma_s * z1)).max(0.0);
        }
    }
    (activity, mu)
}

fn std_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn picker(weights: &[f64]) -> Result<WeightedIndex<f64>> {
    WeightedIndex::new(weights).map_err(|e| Error::Numerical(format!("bad membership weights: {e}")))
}

/// Index of the largest value.
fn argmax(values: impl Iterator<Item = f64>) -> usize {
    values
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map_or(0, |(i, _)| i)
}

struct Emitter<'a> {
    cfg: &'a GeneratorConfig,
    log_mean: f64,
    records: Vec<TransactionRecord>,
    sender_seen: Vec<bool>,
    receiver_seen: Vec<bool>,
}

impl Emitter<'_> {
    fn emit(&mut self, rng: &mut ChaCha8Rng, i: usize, j: usize, slot: usize) {
        let cfg = self.cfg;
        let amount = (self.log_mean + cfg.amount_log_sigma * std_normal(rng)).exp();
        let offset = rng.gen_range(0..cfg.slot_duration_secs);
        self.sender_seen[i] = true;
        self.receiver_seen[j] = true;
        self.records.push(TransactionRecord {
            tx_id: format!("tx{:08}", self.records.len()),
            sender: format!("s{i:05}"),
            receiver: format!("r{j:05}"),
            amount,
            timestamp: cfg.window_start + slot as i64 * cfg.slot_duration_secs + offset,
        });
    }
}

/// Generates a transaction log; the same config always yields the same data.
pub fn generate(cfg: &GeneratorConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let (activity, rates) = plant_dynamics(cfg);
    let totals: Vec<f64> = activity.iter().map(|a| a.iter().sum()).collect();
    if totals.iter().any(|t| *t <= 0.0) {
        return Err(Error::Numerical("planted activity vanished".into()));
    }
    let per_community = cfg.transactions as f64 / cfg.communities as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 2));
    let log_mean = cfg.mean_amount.ln() - 0.5 * cfg.amount_log_sigma * cfg.amount_log_sigma;
    let senders = memberships(cfg.senders, cfg.communities, cfg.activity_exponent);
    let receivers = memberships(cfg.receivers, cfg.communities, cfg.activity_exponent);
    let sender_pick = senders.iter().map(|w| picker(w)).collect::<Result<Vec<_>>>()?;
    let receiver_pick = receivers.iter().map(|w| picker(w)).collect::<Result<Vec<_>>>()?;

    let mut out = Emitter {
        cfg,
        log_mean,
        records: Vec::with_capacity(cfg.transactions + cfg.senders + cfg.receivers),
        sender_seen: vec![false; cfg.senders],
        receiver_seen: vec![false; cfg.receivers],
    };
    for t in 0..cfg.slots {
        for (r, (path, total)) in activity.iter().zip(&totals).enumerate() {
            let n = (per_community * path[t] / total).round() as usize;
            for _ in 0..n {
                let i = sender_pick[r].sample(&mut rng);
                let j = receiver_pick[r].sample(&mut rng);
                out.emit(&mut rng, i, j, t);
            }
        }
    }

    // Accounts never picked trade once, in their community's busiest slot,
    // with the most active counterpart of the community.
    let busiest: Vec<usize> = activity.iter().map(|a| argmax(a.iter().copied())).collect();
    for i in 0..cfg.senders {
        if !out.sender_seen[i] {
            let r = argmax(senders.iter().map(|w| w[i]));
            let j = argmax(receivers[r].iter().copied());
            out.emit(&mut rng, i, j, busiest[r]);
        }
    }
    for j in 0..cfg.receivers {
        if !out.receiver_seen[j] {
            let r = argmax(receivers.iter().map(|w| w[j]));
            let i = argmax(senders[r].iter().copied());
            out.emit(&mut rng, i, j, busiest[r]);
        }
    }
    let records = out.records;

    let mean_amount = records.iter().map(|r| r.amount).sum::<f64>() / records.len().max(1) as f64;
    let truth = GroundTruth {
        config: cfg.clone(),
        activity,
        rates: rates.clone(),
        sender_strength: senders,
        receiver_strength: receivers,
        transactions: records.len(),
        mean_amount,
    };
    Ok(SyntheticData {
        records,
        rates,
        truth,
    })
}
