//! Parameter estimation for the coupled log-normal / mean-reverting model.
//!
//! All quantities are per time slot: one slot is one simulation step.

mod shapiro;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};

pub use shapiro::shapiro_wilk;

/// Consecutive ratios `c[t] / c[t-1]` of a time factor.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioSeries {
    values: Vec<f64>,
    /// Slot index `t` of each ratio, i.e. the later element of the pair.
    slots: Vec<usize>,
    dropped: usize,
    rank: Option<usize>,
}

impl RatioSeries {
    /// Builds a series directly from positive ratios at consecutive slots
    /// `1..=len`.
    pub fn from_ratios(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidInput(format!("ratio {v} is not positive and finite")));
        }
        let slots = (1..=values.len()).collect();
        Ok(Self {
            values,
            slots,
            dropped: 0,
            rank: None,
        })
    }

    pub fn with_rank(mut self, rank: usize) -> Self {
        self.rank = Some(rank);
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn slots(&self) -> &[usize] {
        &self.slots
    }

    /// Pairs rejected by the guard.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn rank(&self) -> Option<usize> {
        self.rank
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn log_returns(&self) -> Vec<f64> {
        self.values.iter().map(|r| r.ln()).collect()
    }
}

/// Ratios of consecutive values, keeping only pairs where both exceed `guard`.
pub fn ratio_series(series: &[f64], guard: f64) -> Result<RatioSeries> {
    if series.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "ratio series needs at least 2 points, got {}",
            series.len()
        )));
    }
    let mut values = Vec::with_capacity(series.len() - 1);
    let mut slots = Vec::with_capacity(series.len() - 1);
    let mut dropped = 0;
    for (t, pair) in series.windows(2).enumerate() {
        let (prev, cur) = (pair[0], pair[1]);
        if prev > guard && cur > guard && prev.is_finite() && cur.is_finite() {
            values.push(cur / prev);
            slots.push(t + 1);
        } else {
            dropped += 1;
        }
    }
    if values.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "only {} usable ratio(s) after dropping {dropped} pair(s) at or below guard {guard}",
            values.len()
        )));
    }
    Ok(RatioSeries {
        values,
        slots,
        dropped,
        rank: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalityResult {
    pub w: f64,
    pub p_value: f64,
    pub n: usize,
    pub alpha: f64,
    pub pass: bool,
}

/// Pass rule for the log-normality test: `p >= alpha`.
pub fn passes(p_value: f64, alpha: f64) -> bool {
    p_value >= alpha
}

/// Shapiro–Wilk on the logarithm of the ratios.
pub fn shapiro_lognormal_test(ratios: &RatioSeries, alpha: f64) -> Result<NormalityResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha must be in (0, 1), got {alpha}")));
    }
    let logs = ratios.log_returns();
    let (w, p_value) = shapiro_wilk(&logs)?;
    Ok(NormalityResult {
        w,
        p_value,
        n: logs.len(),
        alpha,
        pass: passes(p_value, alpha),
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased standard deviation of the log-ratios.
pub fn historical_volatility(ratios: &RatioSeries) -> Result<f64> {
    let logs = ratios.log_returns();
    if logs.len() < 2 {
        return Err(Error::Calibration {
            parameter: "sigma_s",
            message: format!("need at least 2 ratios, got {}", logs.len()),
        });
    }
    let m = mean(&logs);
    let ss: f64 = logs.iter().map(|v| (v - m) * (v - m)).sum();
    Ok((ss / (logs.len() - 1) as f64).sqrt())
}

/// Mean-reversion parameters recovered from an AR(1) fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuEstimate {
    pub lambda: f64,
    pub kappa: f64,
    pub sigma: f64,
    /// Raw regression output `r[t+1] = intercept + slope * r[t] + e`.
    pub intercept: f64,
    pub slope: f64,
    pub residual_sd: f64,
}

/// Least-squares fit of the exact OU discretization.
pub fn calibrate_ou(rates: &[f64], dt: f64) -> Result<OuEstimate> {
    if rates.len() < 3 {
        return Err(Error::Calibration {
            parameter: "lambda",
            message: format!("need at least 3 rate observations, got {}", rates.len()),
        });
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
    }
    if rates.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("rate series contains non-finite values".into()));
    }
    let x = &rates[..rates.len() - 1];
    let y = &rates[1..];
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    // Numerically constant input: the spread is rounding noise.
    let scale: f64 = x.iter().map(|v| v * v).sum();
    if sxx <= scale * 1e-20 {
        return Err(Error::Calibration {
            parameter: "lambda",
            message: format!("rate series has no variation (Sxx = {sxx}); mean reversion not identifiable"),
        });
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let e = b - intercept - slope * a;
            e * e
        })
        .sum();
    let dof = (x.len() as f64 - 2.0).max(1.0);
    let residual_var = rss / dof;
    let residual_sd = residual_var.sqrt();

    if !(slope > 0.0 && slope < 1.0) {
        return Err(Error::Calibration {
            parameter: "lambda",
            message: format!(
                "AR(1) slope {slope} outside (0, 1) (intercept {intercept}, residual sd {residual_sd}); mean reversion not identifiable"
            ),
        });
    }
    let lambda = -slope.ln() / dt;
    let kappa = intercept / (1.0 - slope);
    let sigma = if residual_var < 1e-18 {
        0.0
    } else {
        residual_sd * (-2.0 * slope.ln() / (dt * (1.0 - slope * slope))).sqrt()
    };
    Ok(OuEstimate {
        lambda,
        kappa,
        sigma,
        intercept,
        slope,
        residual_sd,
    })
}

/// EWMA correlation on mean-removed inputs, seeded with first-sample products.
pub fn ewma_correlation(x: &[f64], y: &[f64], weight: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "ewma inputs differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::InvalidInput("ewma correlation needs at least 2 samples".into()));
    }
    if !(weight > 0.0 && weight < 1.0) {
        return Err(Error::InvalidInput(format!("ewma weight must be in (0, 1), got {weight}")));
    }
    let (mx, my) = (mean(x), mean(y));
    let mut pairs = x.iter().zip(y).map(|(a, b)| (a - mx, b - my));
    let (x0, y0) = pairs.next().expect("len >= 2");
    let (mut cov, mut vx, mut vy) = (x0 * y0, x0 * x0, y0 * y0);
    for (a, b) in pairs {
        cov = weight * cov + (1.0 - weight) * a * b;
        vx = weight * vx + (1.0 - weight) * a * a;
        vy = weight * vy + (1.0 - weight) * b * b;
    }
    if vx <= 0.0 || vy <= 0.0 {
        return Err(Error::Calibration {
            parameter: "rho",
            message: "zero EWMA variance in one of the inputs".into(),
        });
    }
    Ok((cov / (vx * vy).sqrt()).clamp(-1.0, 1.0))
}

/// The five model parameters plus the initial states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub sigma_s: f64,
    pub lambda: f64,
    pub kappa: f64,
    pub sigma_mu: f64,
    pub rho: f64,
    pub s0: f64,
    pub mu0: f64,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.sigma_s,
            self.lambda,
            self.kappa,
            self.sigma_mu,
            self.rho,
            self.s0,
            self.mu0,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite model parameter in {self:?}")));
        }
        if self.sigma_s < 0.0 || self.sigma_mu < 0.0 || self.lambda < 0.0 {
            return Err(Error::InvalidInput(
                "sigma_s, sigma_mu and lambda must be non-negative".into(),
            ));
        }
        if self.rho.abs() > 1.0 {
            return Err(Error::InvalidInput(format!("rho {} outside [-1, 1]", self.rho)));
        }
        Ok(())
    }

    /// JSON document with a unit annotation per field.
    pub fn to_json_value(&self) -> serde_json::Value {
        json!({
            "sigma_s": self.sigma_s,
            "lambda": self.lambda,
            "kappa": self.kappa,
            "sigma_mu": self.sigma_mu,
            "rho": self.rho,
            "s0": self.s0,
            "mu0": self.mu0,
            "units": {
                "sigma_s": "per sqrt(slot)",
                "lambda": "per slot",
                "kappa": "drift per slot",
                "sigma_mu": "per sqrt(slot)",
                "rho": "dimensionless",
                "s0": "time-factor level",
                "mu0": "drift per slot",
            }
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_json_value())?)
    }

    /// Reads the format of [`ModelParams::to_json`]; `units` is ignored.
    pub fn from_json(s: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Doc {
            sigma_s: f64,
            lambda: f64,
            kappa: f64,
            sigma_mu: f64,
            rho: f64,
            s0: f64,
            mu0: f64,
        }
        let d: Doc = serde_json::from_str(s)?;
        let p = ModelParams {
            sigma_s: d.sigma_s,
            lambda: d.lambda,
            kappa: d.kappa,
            sigma_mu: d.sigma_mu,
            rho: d.rho,
            s0: d.s0,
            mu0: d.mu0,
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    /// Factor values at or below this are excluded from ratios.
    pub guard: f64,
    pub ewma_weight: f64,
    /// Slot length in simulation steps.
    pub dt: f64,
    /// Significance level of the log-normality test.
    pub alpha: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            guard: 1e-12,
            ewma_weight: 0.9,
            dt: 1.0,
            alpha: 0.10,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.guard >= 0.0 && self.guard.is_finite()) {
            return Err(Error::Config(format!("guard must be >= 0, got {}", self.guard)));
        }
        if !(self.ewma_weight > 0.0 && self.ewma_weight < 1.0) {
            return Err(Error::Config(format!(
                "ewma_weight must be in (0, 1), got {}",
                self.ewma_weight
            )));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Correlation between factor log-returns and same-slot rate increments.
pub fn factor_rate_correlation(ratios: &RatioSeries, rates: &[f64], weight: f64) -> Result<f64> {
    let mut x = Vec::with_capacity(ratios.len());
    let mut y = Vec::with_capacity(ratios.len());
    for (&r, &t) in ratios.values().iter().zip(ratios.slots()) {
        if t == 0 || t >= rates.len() {
            return Err(Error::DimensionMismatch(format!(
                "ratio at slot {t} has no matching rate increment ({} rates)",
                rates.len()
            )));
        }
        x.push(r.ln());
        y.push(rates[t] - rates[t - 1]);
    }
    ewma_correlation(&x, &y, weight).map_err(|e| match e {
        Error::Calibration { message, .. } => Error::Calibration {
            parameter: "rho",
            message,
        },
        Error::InvalidInput(message) => Error::Calibration {
            parameter: "rho",
            message,
        },
        other => other,
    })
}

/// Calibrates every parameter from a time factor and a slot-aligned rate
/// series of the same length.
///
/// `s0` is the last factor value and `mu0` the last rate, so a simulation
/// started from the result continues where the inputs end.
pub fn calibrate_all(time_factor: &[f64], rates: &[f64], cfg: &CalibrationConfig) -> Result<ModelParams> {
    cfg.validate()?;
    if time_factor.len() != rates.len() {
        return Err(Error::DimensionMismatch(format!(
            "time factor has {} slots but rate series has {}",
            time_factor.len(),
            rates.len()
        )));
    }
    let ratios = ratio_series(time_factor, cfg.guard).map_err(|e| Error::Calibration {
        parameter: "sigma_s",
        message: e.to_string(),
    })?;
    let sigma_s = historical_volatility(&ratios)?;
    let ou = calibrate_ou(rates, cfg.dt)?;
    let rho = factor_rate_correlation(&ratios, rates, cfg.ewma_weight)?;
    let s0 = *time_factor.last().expect("checked length");
    if s0.is_nan() || s0 <= 0.0 {
        return Err(Error::Calibration {
            parameter: "s0",
            message: format!("last factor value {s0} is not positive"),
        });
    }
    Ok(ModelParams {
        sigma_s,
        lambda: ou.lambda,
        kappa: ou.kappa,
        sigma_mu: ou.sigma,
        rho,
        s0,
        mu0: *rates.last().expect("checked length"),
    })
}
