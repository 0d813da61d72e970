//! Restarting baselines HAND-1 and HAND-2.
//!
//! Both flow `z1' = (2/tau)(z2 - z1)`, `z2' = -2 c tau grad L(z1)`, `tau' = 1`
//! on `tau in [T_min, T_max]` and reset the clock to `T_min`. HAND-1 resets at
//! `T_med` and keeps `z`; HAND-2 resets at `T_max` and also sets `z2 = z1`.
//! The logic mode is unused and stays wherever it starts.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{require_positive, Error, Result};
use crate::hybrid::{HybridState, HybridSystem, StateDerivative};
use crate::objective::{GradientOracle, Problem};
use crate::vecops::dist;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hand1Params {
    pub c1: f64,
    pub t_min: f64,
    pub t_med: f64,
    pub t_max: f64,
}

impl Hand1Params {
    pub fn new(c1: f64, t_min: f64, t_med: f64, t_max: f64) -> Result<Self> {
        require_positive("c1", c1)?;
        require_positive("t_min", t_min)?;
        if !(t_min < t_med && t_med < t_max && t_max.is_finite()) {
            return Err(Error::invalid(
                "t_med",
                format!("need 0 < t_min < t_med < t_max, got {t_min}, {t_med}, {t_max}"),
            ));
        }
        Ok(Hand1Params { c1, t_min, t_med, t_max })
    }

    pub fn from_schedule(c1: f64, t_min: f64, schedule: &Hand1Schedule) -> Result<Self> {
        Self::new(c1, t_min, schedule.t_med, schedule.t_max)
    }
}

/// Clock schedule derived from the initial-ball radius `r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hand1Schedule {
    pub b: f64,
    pub t_med: f64,
    pub t_max: f64,
}

/// `B = r^2/(2 c1) + T_min^2 (L0 - L*)`, `T_med = sqrt(B/delta_med) + T_min`,
/// `T_max = T_med + 1`.
pub fn derive_hand1_schedule(r: f64, c1: f64, t_min: f64, delta_med: f64, gap0: f64) -> Result<Hand1Schedule> {
    require_positive("r", r)?;
    require_positive("c1", c1)?;
    require_positive("t_min", t_min)?;
    require_positive("delta_med", delta_med)?;
    if !(gap0 >= 0.0 && gap0.is_finite()) {
        return Err(Error::invalid("gap0", format!("initial suboptimality must be finite and nonnegative, got {gap0}")));
    }
    let b = r * r / (2.0 * c1) + t_min * t_min * gap0;
    let t_med = (b / delta_med).sqrt() + t_min;
    Ok(Hand1Schedule {
        b,
        t_med,
        t_max: t_med + 1.0,
    })
}

/// `B / t^2`, valid until the first reset when `z1(0,0) = z2(0,0)`.
pub fn hand1_rate_bound(t: f64, b: f64) -> Result<f64> {
    require_positive("t", t)?;
    Ok(b / (t * t))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hand2Params {
    pub c: f64,
    pub t_min: f64,
    pub t_max: f64,
}

/// Rate constants of HAND-2 for a given `mu` and `M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hand2Constants {
    pub delta_t: f64,
    pub k1: f64,
    pub k0: f64,
    pub kb_tilde: f64,
    pub ka: f64,
}

impl Hand2Params {
    pub fn new(c: f64, t_min: f64, t_max: f64) -> Result<Self> {
        require_positive("c", c)?;
        require_positive("t_min", t_min)?;
        if !(t_max > t_min && t_max.is_finite()) {
            return Err(Error::invalid("t_max", format!("need t_max > t_min, got {t_max} <= {t_min}")));
        }
        Ok(Hand2Params { c, t_min, t_max })
    }

    /// `1/(c mu) < T_max^2 - T_min^2`
    pub fn check_validity(&self, mu: f64) -> Result<()> {
        require_positive("mu", mu)?;
        let lhs = 1.0 / (self.c * mu);
        let rhs = self.t_max * self.t_max - self.t_min * self.t_min;
        if lhs < rhs {
            Ok(())
        } else {
            Err(Error::invalid(
                "c",
                format!("restart window too short: 1/(c mu) = {lhs} is not below T_max^2 - T_min^2 = {rhs}"),
            ))
        }
    }

    pub fn constants(&self, mu: f64, lipschitz_m: f64) -> Hand2Constants {
        let delta_t = self.t_max - self.t_min;
        let num = 1.0 / (self.c * mu) + self.t_min * self.t_min;
        let k1 = num / (delta_t * delta_t);
        let k0 = num / (self.t_max * self.t_max);
        Hand2Constants {
            delta_t,
            k1,
            k0,
            kb_tilde: 1.0 - k0,
            ka: 0.5 * k1 * lipschitz_m,
        }
    }
}

/// `k_a |z1(0,0) - z1*|^2 exp(-k~_b alpha~(t + j))`, with
/// `alpha~(s) = max(s - dT, 0) / (dT + 1)`.
pub fn hand2_rate_bound(t: f64, j: usize, k: &Hand2Constants, z1_0: &[f64], z1_star: &[f64]) -> f64 {
    let s = t + j as f64;
    let alpha_tilde = (s - k.delta_t).max(0.0) / (k.delta_t + 1.0);
    let d = dist(z1_0, z1_star);
    k.ka * d * d * (-k.kb_tilde * alpha_tilde).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Reset {
    /// Reset at `T_med`, keep `z`.
    Clock { t_med: f64 },
    /// Reset at `T_max`, set `z2 = z1`.
    Velocity,
}

/// HAND-1 or HAND-2 as a hybrid system.
#[derive(Clone)]
pub struct HandSystem {
    c: f64,
    t_min: f64,
    t_max: f64,
    reset: Reset,
    oracle: Arc<dyn GradientOracle>,
}

pub fn build_hand1(p: &Hand1Params, problem: &Problem) -> Result<HandSystem> {
    Hand1Params::new(p.c1, p.t_min, p.t_med, p.t_max)?;
    Ok(HandSystem {
        c: p.c1,
        t_min: p.t_min,
        t_max: p.t_max,
        reset: Reset::Clock { t_med: p.t_med },
        oracle: Arc::new(problem.clone()),
    })
}

pub fn build_hand2(p: &Hand2Params, problem: &Problem) -> Result<HandSystem> {
    Hand2Params::new(p.c, p.t_min, p.t_max)?;
    let mu = problem
        .mu()
        .ok_or_else(|| Error::invalid("mu", "HAND-2 needs a strong convexity constant"))?;
    p.check_validity(mu)?;
    Ok(HandSystem {
        c: p.c,
        t_min: p.t_min,
        t_max: p.t_max,
        reset: Reset::Velocity,
        oracle: Arc::new(problem.clone()),
    })
}

impl HandSystem {
    pub fn t_min(&self) -> f64 {
        self.t_min
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    /// Clock value at which resets fire.
    pub fn reset_at(&self) -> f64 {
        match self.reset {
            Reset::Clock { t_med } => t_med,
            Reset::Velocity => self.t_max,
        }
    }

    pub fn oracle(&self) -> &Arc<dyn GradientOracle> {
        &self.oracle
    }

    pub fn with_oracle(&self, oracle: Arc<dyn GradientOracle>) -> Self {
        HandSystem {
            oracle,
            ..self.clone()
        }
    }
}

impl HybridSystem for HandSystem {
    fn dim(&self) -> usize {
        self.oracle.dim()
    }

    fn flow(&self, t: f64, x: &HybridState, dx: &mut StateDerivative) {
        let k = 2.0 / x.tau;
        for ((d, a), b) in dx.dz1.iter_mut().zip(&x.z1).zip(&x.z2) {
            *d = k * (b - a);
        }
        self.oracle.gradient(t, &x.z1, &mut dx.dz2);
        let gain = 2.0 * self.c * x.tau;
        for d in dx.dz2.iter_mut() {
            *d *= -gain;
        }
        dx.dtau = 1.0;
    }

    fn in_flow_set(&self, _t: f64, x: &HybridState) -> bool {
        x.tau >= self.t_min && x.tau <= self.t_max
    }

    fn in_jump_set(&self, _t: f64, x: &HybridState) -> bool {
        match self.reset {
            Reset::Clock { t_med } => x.tau >= t_med && x.tau <= self.t_max,
            Reset::Velocity => x.tau >= self.t_max,
        }
    }

    fn jump(&self, _t: f64, x: &HybridState) -> HybridState {
        match self.reset {
            Reset::Clock { .. } => HybridState {
                tau: self.t_min,
                ..x.clone()
            },
            Reset::Velocity => HybridState {
                z1: x.z1.clone(),
                z2: x.z1.clone(),
                q: x.q,
                tau: self.t_min,
            },
        }
    }

    fn jump_margin(&self, _t: f64, x: &HybridState) -> Option<f64> {
        Some(self.reset_at() - x.tau)
    }
}
