//! Per-device AIMD update rules and the running-average recursion.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cost::CostFunction;
use crate::error::{Error, Result};

/// Averages at or below this are treated as degenerate when computing λ.
pub const EPS_FLOOR: f64 = 1e-9;
/// λ is kept inside `[EPS_LAMBDA, 1 - EPS_LAMBDA]`.
pub const EPS_LAMBDA: f64 = 1e-6;

/// Constants the control unit broadcasts for one resource.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResourceParams {
    pub capacity: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Fraction of capacity above which a capacity event fires.
    pub gamma_cap: f64,
    /// Normalization constant Γ for the scaling factor.
    pub normalization: f64,
}

impl ResourceParams {
    /// Returns the names of fields violating their ranges.
    pub fn invalid_fields(&self) -> Vec<(&'static str, String)> {
        let mut bad = Vec::new();
        if !(self.capacity >= 0.0 && self.capacity.is_finite()) {
            bad.push(("capacity", format!("must be a finite nonnegative number, got {}", self.capacity)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            bad.push(("alpha", format!("must be positive, got {}", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.beta) {
            bad.push(("beta", format!("must be in [0, 1), got {}", self.beta)));
        }
        if !(self.gamma_cap > 0.0 && self.gamma_cap <= 1.0) {
            bad.push(("gamma_cap", format!("must be in (0, 1], got {}", self.gamma_cap)));
        }
        if !(self.normalization > 0.0 && self.normalization.is_finite()) {
            bad.push(("normalization", format!("must be positive, got {}", self.normalization)));
        }
        bad
    }

    /// Total demand above which a capacity event fires.
    pub fn threshold(&self) -> f64 {
        self.gamma_cap * self.capacity
    }
}

pub fn additive_increase(x: f64, alpha: f64) -> f64 {
    x + alpha
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clamp {
    Low,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingFactor {
    pub lambda: f64,
    pub raw: f64,
    pub clamp: Option<Clamp>,
}

/// `Γ · ∂_j f(x̄) / x̄_j`, clamped into `[EPS_LAMBDA, 1 - EPS_LAMBDA]`.
pub fn scaling_factor(normalization: f64, grad: f64, x_bar_j: f64) -> Result<ScalingFactor, f64> {
    if !(x_bar_j > EPS_FLOOR) {
        return Err(x_bar_j);
    }
    let raw = normalization * grad / x_bar_j;
    let (lambda, clamp) = if raw < EPS_LAMBDA {
        (EPS_LAMBDA, Some(Clamp::Low))
    } else if raw > 1.0 - EPS_LAMBDA {
        (1.0 - EPS_LAMBDA, Some(Clamp::High))
    } else {
        (raw, None)
    };
    Ok(ScalingFactor { lambda, raw, clamp })
}

/// `(λβ + 1 − λ) · x`
pub fn md_deterministic(x: f64, lambda: f64, beta: f64) -> f64 {
    (lambda * beta + (1.0 - lambda)) * x
}

/// `β · x` with probability λ, otherwise `x`. Draws exactly one uniform.
pub fn md_stochastic<R: Rng + ?Sized>(x: f64, lambda: f64, beta: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    if u < lambda {
        beta * x
    } else {
        x
    }
}

/// `x̄(k+1) = (k+1)/(k+2) · x̄(k) + 1/(k+2) · x(k+1)`
pub fn update_average(x_bar: f64, x_next: f64, k: u64) -> f64 {
    let k = k as f64;
    (k + 1.0) / (k + 2.0) * x_bar + x_next / (k + 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Deterministic,
    Stochastic,
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Mode::Deterministic => "deterministic",
            Mode::Stochastic => "stochastic",
        }
    }
}

/// Counts of clamped scaling factors.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClampCounts {
    pub low: u64,
    pub high: u64,
}

impl ClampCounts {
    pub fn record(&mut self, clamp: Option<Clamp>) {
        match clamp {
            Some(Clamp::Low) => self.low += 1,
            Some(Clamp::High) => self.high += 1,
            None => {}
        }
    }

    pub fn total(&self) -> u64 {
        self.low + self.high
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceState {
    pub id: usize,
    pub x: Vec<f64>,
    pub x_bar: Vec<f64>,
    pub k: u64,
    pub cost: CostFunction,
}

impl DeviceState {
    pub fn new(id: usize, m: usize, cost: CostFunction) -> Self {
        DeviceState {
            id,
            x: vec![0.0; m],
            x_bar: vec![0.0; m],
            k: 0,
            cost,
        }
    }

    /// One round: for each resource apply MD if its event bit is set, AI
    /// otherwise, then fold the new allocation into the average. λ is
    /// computed from the averages held before this round.
    pub fn step<R: Rng>(
        &self,
        events: &[bool],
        params: &[ResourceParams],
        mode: Mode,
        streams: &mut [R],
        clamps: &mut ClampCounts,
    ) -> Result<DeviceState> {
        let m = self.x.len();
        let mut x = Vec::with_capacity(m);
        for j in 0..m {
            let p = &params[j];
            let next = if events[j] {
                let grad = self.cost.marginal(j, self.x_bar[j]);
                let s = scaling_factor(p.normalization, grad, self.x_bar[j]).map_err(|x_bar| {
                    Error::DegenerateAverage {
                        device: self.id,
                        resource: j,
                        step: self.k,
                        x_bar,
                    }
                })?;
                clamps.record(s.clamp);
                match mode {
                    Mode::Deterministic => md_deterministic(self.x[j], s.lambda, p.beta),
                    Mode::Stochastic => md_stochastic(self.x[j], s.lambda, p.beta, &mut streams[j]),
                }
            } else {
                additive_increase(self.x[j], p.alpha)
            };
            x.push(next);
        }
        let x_bar = self
            .x_bar
            .iter()
            .zip(&x)
            .map(|(&avg, &xn)| update_average(avg, xn, self.k))
            .collect();
        Ok(DeviceState {
            id: self.id,
            x,
            x_bar,
            k: self.k + 1,
            cost: self.cost,
        })
    }
}
