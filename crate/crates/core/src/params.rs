use serde::{Deserialize, Serialize};

use crate::error::{PqsError, Result};

/// Decay rate of the monitored emitter, 1/us.
pub const DEFAULT_GAMMA: f64 = 1.628;
/// Detector efficiency recovered from the |+-x> calibration.
pub const DEFAULT_ETA: f64 = 0.3;
/// Digitizer step, us.
pub const DEFAULT_DT: f64 = 0.02;
/// Record length of the trajectory experiments, us.
pub const DEFAULT_T: f64 = 1.68;
pub const DEFAULT_ETA_P: f64 = 0.95;

/// Largest admissible `gamma * dt` for first-order stepping.
pub const MAX_GAMMA_DT: f64 = 0.1;

/// Physical and numerical parameters. Times in us, rates in 1/us.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    pub gamma: f64,
    pub eta: f64,
    pub dt: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub eta_p: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            eta: DEFAULT_ETA,
            dt: DEFAULT_DT,
            horizon: DEFAULT_T,
            eta_p: DEFAULT_ETA_P,
        }
    }
}

impl SimParams {
    pub fn new(gamma: f64, eta: f64, dt: f64, horizon: f64, eta_p: f64) -> Result<Self> {
        let p = Self {
            gamma,
            eta,
            dt,
            horizon,
            eta_p,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_horizon(self, horizon: f64) -> Result<Self> {
        let p = Self { horizon, ..self };
        p.validate()?;
        Ok(p)
    }

    pub fn with_dt(self, dt: f64) -> Result<Self> {
        let p = Self { dt, ..self };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(PqsError::InvalidParams(msg));
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return bad(format!("eta must lie in [0, 1], got {}", self.eta));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.gamma * self.dt > MAX_GAMMA_DT {
            return bad(format!(
                "gamma*dt = {} exceeds {MAX_GAMMA_DT}",
                self.gamma * self.dt
            ));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad(format!("T must be positive, got {}", self.horizon));
        }
        if grid_index(self.horizon, self.dt).is_none() {
            return bad(format!(
                "T = {} is not an integer multiple of dt = {}",
                self.horizon, self.dt
            ));
        }
        if !(self.eta_p > 0.5 && self.eta_p <= 1.0) {
            return bad(format!("eta_p must lie in (0.5, 1], got {}", self.eta_p));
        }
        Ok(())
    }

    /// Number of steps covering `[0, T)`.
    pub fn steps(&self) -> usize {
        grid_index(self.horizon, self.dt).unwrap_or(0)
    }

    pub fn gamma_dt(&self) -> f64 {
        self.gamma * self.dt
    }

    /// `sqrt(eta) * gamma * dt`: the largest mean signal reachable without
    /// post-selection.
    pub fn signal_bound(&self) -> f64 {
        self.eta.sqrt() * self.gamma * self.dt
    }
}

/// `Some(k)` when `t` is `k * dt` up to rounding.
pub fn grid_index(t: f64, dt: f64) -> Option<usize> {
    if !(t >= 0.0) || !(dt > 0.0) {
        return None;
    }
    let k = (t / dt).round();
    if (k * dt - t).abs() <= 1e-9 * dt.max(t) {
        Some(k as usize)
    } else {
        None
    }
}
