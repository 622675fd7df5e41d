//! Seeded Euler–Maruyama simulation of the coupled system
//!
//! ```text
//! dS = S (mu dt + sigma_s dW1)
//! dmu = lambda (kappa - mu) dt + sigma_mu dW2,   d<W1, W2> = rho dt
//! ```
//!
//! and of its two special cases, plain GBM and plain OU.
//!
//! Draw contract: at every step each path takes one normal pair `(z1, z2)`
//! from its own [`NormalPairs`] stream. `z1` drives `S` (or the OU state in
//! [`simulate_ou`]); `z2` is mixed in only for the drift, as
//! `dW2 = sqrt(dt) (rho z1 + sqrt(1 - rho²) z2)`. Both states advance from
//! their time-`t` values. A path whose `S` reaches zero or below is set to
//! zero and stays there.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::ModelParams;
use crate::error::{Error, Result};
use crate::rng::NormalPairs;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    #[default]
    Euler,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    /// Step length in slots.
    pub dt: f64,
    pub seed: u64,
    pub scheme: Scheme,
    /// Keep every path and Brownian increment (memory grows as paths x steps).
    pub record_paths: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_paths: 100_000,
            n_steps: 1,
            dt: 1.0,
            seed: 0,
            scheme: Scheme::Euler,
            record_paths: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 || self.n_steps == 0 {
            return Err(Error::Config("n_paths and n_steps must be at least 1".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        Ok(())
    }
}

/// What was simulated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum Dynamics {
    Gbm { s0: f64, mu: f64, sigma: f64 },
    Ou { r0: f64, lambda: f64, kappa: f64, sigma: f64 },
    Coupled(ModelParams),
}

/// Full trajectories, present only when [`SimConfig::record_paths`] is set.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedPaths {
    /// `n_steps + 1` states per path, path-major.
    pub s: Vec<f64>,
    /// Drift states for coupled runs; empty otherwise.
    pub mu: Vec<f64>,
    /// Brownian increments `(dW1, dW2)`, `n_steps` per path, path-major.
    pub increments: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    pub terminals: Vec<f64>,
    pub recorded: Option<RecordedPaths>,
    pub dynamics: Dynamics,
    pub config: SimConfig,
    /// Paths absorbed at zero.
    pub absorbed: usize,
}

impl PathBundle {
    /// One terminal value per line.
    pub fn terminals_csv(&self) -> String {
        let mut out = String::with_capacity(self.terminals.len() * 20);
        for v in &self.terminals {
            out.push_str(&v.to_string());
            out.push('\n');
        }
        out
    }

    pub fn mean_terminal(&self) -> f64 {
        self.terminals.iter().sum::<f64>() / self.terminals.len() as f64
    }
}

struct PathOut {
    terminal: f64,
    absorbed: bool,
    s: Vec<f64>,
    mu: Vec<f64>,
    increments: Vec<(f64, f64)>,
}

/// Runs `step` over every path in parallel and gathers results in path order.
fn run_paths<F>(cfg: &SimConfig, dynamics: Dynamics, simulate_path: F) -> PathBundle
where
    F: Fn(&mut NormalPairs, bool) -> PathOut + Sync,
{
    let outs: Vec<PathOut> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = NormalPairs::new(cfg.seed, p as u64);
            simulate_path(&mut rng, cfg.record_paths)
        })
        .collect();

    let absorbed = outs.iter().filter(|o| o.absorbed).count();
    let terminals = outs.iter().map(|o| o.terminal).collect();
    let recorded = cfg.record_paths.then(|| {
        let mut rec = RecordedPaths {
            s: Vec::with_capacity(cfg.n_paths * (cfg.n_steps + 1)),
            mu: Vec::new(),
            increments: Vec::with_capacity(cfg.n_paths * cfg.n_steps),
        };
        for o in outs {
            rec.s.extend(o.s);
            rec.mu.extend(o.mu);
            rec.increments.extend(o.increments);
        }
        rec
    });
    PathBundle {
        terminals,
        recorded,
        dynamics,
        config: *cfg,
        absorbed,
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("simulation parameters must be finite".into()));
    }
    Ok(())
}

/// Geometric Brownian motion with constant drift.
pub fn simulate_gbm(s0: f64, mu: f64, sigma: f64, cfg: &SimConfig) -> Result<PathBundle> {
    cfg.validate()?;
    check_finite(&[s0, mu, sigma])?;
    if s0 <= 0.0 || sigma < 0.0 {
        return Err(Error::InvalidInput(format!(
            "gbm needs s0 > 0 and sigma >= 0, got s0 = {s0}, sigma = {sigma}"
        )));
    }
    let dt = cfg.dt;
    let sqrt_dt = dt.sqrt();
    let n_steps = cfg.n_steps;
    Ok(run_paths(cfg, Dynamics::Gbm { s0, mu, sigma }, |rng, record| {
        let mut s = s0;
        let mut absorbed = false;
        let mut path = Vec::new();
        let mut incs = Vec::new();
        if record {
            path.reserve(n_steps + 1);
            path.push(s);
        }
        for _ in 0..n_steps {
            let (z1, z2) = rng.next_pair();
            let dw1 = sqrt_dt * z1;
            if !absorbed {
                s *= 1.0 + mu * dt + sigma * dw1;
                if s <= 0.0 {
                    s = 0.0;
                    absorbed = true;
                }
            }
            if record {
                path.push(s);
                incs.push((dw1, sqrt_dt * z2));
            }
        }
        PathOut {
            terminal: s,
            absorbed,
            s: path,
            mu: Vec::new(),
            increments: incs,
        }
    }))
}

/// Ornstein–Uhlenbeck process.
pub fn simulate_ou(r0: f64, lambda: f64, kappa: f64, sigma: f64, cfg: &SimConfig) -> Result<PathBundle> {
    cfg.validate()?;
    check_finite(&[r0, lambda, kappa, sigma])?;
    if lambda < 0.0 || sigma < 0.0 {
        return Err(Error::InvalidInput(format!(
            "ou needs lambda >= 0 and sigma >= 0, got lambda = {lambda}, sigma = {sigma}"
        )));
    }
    let dt = cfg.dt;
    let sqrt_dt = dt.sqrt();
    let n_steps = cfg.n_steps;
    let dynamics = Dynamics::Ou {
        r0,
        lambda,
        kappa,
        sigma,
    };
    Ok(run_paths(cfg, dynamics, |rng, record| {
        let mut r = r0;
        let mut path = Vec::new();
        let mut incs = Vec::new();
        if record {
            path.reserve(n_steps + 1);
            path.push(r);
        }
        for _ in 0..n_steps {
            let (z1, z2) = rng.next_pair();
            let dw1 = sqrt_dt * z1;
            r += lambda * (kappa - r) * dt + sigma * dw1;
            if record {
                path.push(r);
                incs.push((dw1, sqrt_dt * z2));
            }
        }
        PathOut {
            terminal: r,
            absorbed: false,
            s: path,
            mu: Vec::new(),
            increments: incs,
        }
    }))
}

/// The coupled log-normal / mean-reverting system.
pub fn simulate_coupled(p: &ModelParams, cfg: &SimConfig) -> Result<PathBundle> {
    cfg.validate()?;
    p.validate()?;
    if p.s0 <= 0.0 {
        return Err(Error::InvalidInput(format!("s0 must be positive, got {}", p.s0)));
    }
    let dt = cfg.dt;
    let sqrt_dt = dt.sqrt();
    let n_steps = cfg.n_steps;
    let rho_perp = (1.0 - p.rho * p.rho).sqrt();
    let params = *p;
    Ok(run_paths(cfg, Dynamics::Coupled(params), |rng, record| {
        let mut s = params.s0;
        let mut mu = params.mu0;
        let mut absorbed = false;
        let (mut s_path, mut mu_path, mut incs) = (Vec::new(), Vec::new(), Vec::new());
        if record {
            s_path.reserve(n_steps + 1);
            mu_path.reserve(n_steps + 1);
            s_path.push(s);
            mu_path.push(mu);
        }
        for _ in 0..n_steps {
            let (z1, z2) = rng.next_pair();
            let dw1 = sqrt_dt * z1;
            let dw2 = sqrt_dt * (params.rho * z1 + rho_perp * z2);
            let mu_t = mu;
            mu += params.lambda * (params.kappa - mu_t) * dt + params.sigma_mu * dw2;
            if !absorbed {
                s *= 1.0 + mu_t * dt + params.sigma_s * dw1;
                if s <= 0.0 {
                    s = 0.0;
                    absorbed = true;
                }
            }
            if record {
                s_path.push(s);
                mu_path.push(mu);
                incs.push((dw1, dw2));
            }
        }
        PathOut {
            terminal: s,
            absorbed,
            s: s_path,
            mu: mu_path,
            increments: incs,
        }
    }))
}

/// Pooled sample correlation of the recorded `(dW1, dW2)` increments.
pub fn correlated_increment_check(bundle: &PathBundle) -> Result<f64> {
    let rec = bundle
        .recorded
        .as_ref()
        .filter(|r| !r.increments.is_empty())
        .ok_or_else(|| Error::InvalidInput("bundle has no recorded increments".into()))?;
    let n = rec.increments.len() as f64;
    let (sx, sy) = rec
        .increments
        .iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    let (mut cxy, mut cxx, mut cyy) = (0.0, 0.0, 0.0);
    for (x, y) in &rec.increments {
        let (dx, dy) = (x - mx, y - my);
        cxy += dx * dy;
        cxx += dx * dx;
        cyy += dy * dy;
    }
    if cxx == 0.0 || cyy == 0.0 {
        return Err(Error::Numerical("increment stream has zero variance".into()));
    }
    Ok((cxy / (cxx * cyy).sqrt()).clamp(-1.0, 1.0))
}
