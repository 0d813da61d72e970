//! Hybrid systems `(C, F, D, G)` over the state `(z1, z2, q, tau)` and a
//! fixed-step solver with jump priority.

mod arc;
mod rk4;
mod solve;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use arc::{JumpRecord, Sample, SolutionArc, Termination};
pub use rk4::{locate_jump, rk4_step};
pub use solve::{solve, IntegratorConfig, Monitor, SettleStop};

/// Logic mode `q`. `Local` is `q = 0`, `Global` is `q = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    Local,
    Global,
}

impl Mode {
    pub fn index(self) -> u8 {
        match self {
            Mode::Local => 0,
            Mode::Global => 1,
        }
    }

    pub fn from_index(q: u8) -> Option<Mode> {
        match q {
            0 => Some(Mode::Local),
            1 => Some(Mode::Global),
            _ => None,
        }
    }

    pub fn toggled(self) -> Mode {
        match self {
            Mode::Local => Mode::Global,
            Mode::Global => Mode::Local,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

/// Hybrid time `(t, j)`: elapsed flow time and number of jumps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridTime {
    pub t: f64,
    pub j: usize,
}

impl HybridTime {
    pub fn new(t: f64, j: usize) -> Self {
        HybridTime { t, j }
    }

    /// Lexicographic strict order on `(t, j)`.
    pub fn precedes(&self, other: &HybridTime) -> bool {
        self.t < other.t || (self.t == other.t && self.j < other.j)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridState {
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
    pub q: Mode,
    pub tau: f64,
}

impl HybridState {
    pub fn new(z1: Vec<f64>, z2: Vec<f64>, q: Mode, tau: f64) -> Self {
        debug_assert_eq!(z1.len(), z2.len());
        HybridState { z1, z2, q, tau }
    }

    /// Scalar convenience constructor.
    pub fn scalar(z1: f64, z2: f64, q: Mode, tau: f64) -> Self {
        HybridState::new(vec![z1], vec![z2], q, tau)
    }

    pub fn dim(&self) -> usize {
        self.z1.len()
    }

    pub fn is_finite(&self) -> bool {
        self.tau.is_finite() && self.z1.iter().chain(&self.z2).all(|v| v.is_finite())
    }
}

/// Time derivative of `(z1, z2, tau)`; `q` never changes during flow.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDerivative {
    pub dz1: Vec<f64>,
    pub dz2: Vec<f64>,
    pub dtau: f64,
}

impl StateDerivative {
    pub fn zeros(n: usize) -> Self {
        StateDerivative {
            dz1: vec![0.0; n],
            dz2: vec![0.0; n],
            dtau: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.dtau.is_finite() && self.dz1.iter().chain(&self.dz2).all(|v| v.is_finite())
    }
}

/// Data `(C, F, D, G)` of a hybrid system.
///
/// Every method receives `t`, the accumulated flow time of the solve. Nominal
/// systems ignore it; gradient-perturbed systems use it as their noise clock.
pub trait HybridSystem: Send + Sync {
    fn dim(&self) -> usize;

    fn flow(&self, t: f64, x: &HybridState, dx: &mut StateDerivative);

    fn in_flow_set(&self, t: f64, x: &HybridState) -> bool;

    fn in_jump_set(&self, t: f64, x: &HybridState) -> bool;

    fn jump(&self, t: f64, x: &HybridState) -> HybridState;

    /// Signed distance-like guard for the jump set, `<= 0` inside it.
    ///
    /// Systems that return `Some` get an extra mid-step probe so that thin
    /// jump sets are not stepped over.
    fn jump_margin(&self, _t: f64, _x: &HybridState) -> Option<f64> {
        None
    }
}

impl<S: HybridSystem + ?Sized> HybridSystem for &S {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn flow(&self, t: f64, x: &HybridState, dx: &mut StateDerivative) {
        (**self).flow(t, x, dx)
    }
    fn in_flow_set(&self, t: f64, x: &HybridState) -> bool {
        (**self).in_flow_set(t, x)
    }
    fn in_jump_set(&self, t: f64, x: &HybridState) -> bool {
        (**self).in_jump_set(t, x)
    }
    fn jump(&self, t: f64, x: &HybridState) -> HybridState {
        (**self).jump(t, x)
    }
    fn jump_margin(&self, t: f64, x: &HybridState) -> Option<f64> {
        (**self).jump_margin(t, x)
    }
}

impl<S: HybridSystem + ?Sized> HybridSystem for Box<S> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn flow(&self, t: f64, x: &HybridState, dx: &mut StateDerivative) {
        (**self).flow(t, x, dx)
    }
    fn in_flow_set(&self, t: f64, x: &HybridState) -> bool {
        (**self).in_flow_set(t, x)
    }
    fn in_jump_set(&self, t: f64, x: &HybridState) -> bool {
        (**self).in_jump_set(t, x)
    }
    fn jump(&self, t: f64, x: &HybridState) -> HybridState {
        (**self).jump(t, x)
    }
    fn jump_margin(&self, t: f64, x: &HybridState) -> Option<f64> {
        (**self).jump_margin(t, x)
    }
}

impl<S: HybridSystem + ?Sized> HybridSystem for Arc<S> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn flow(&self, t: f64, x: &HybridState, dx: &mut StateDerivative) {
        (**self).flow(t, x, dx)
    }
    fn in_flow_set(&self, t: f64, x: &HybridState) -> bool {
        (**self).in_flow_set(t, x)
    }
    fn in_jump_set(&self, t: f64, x: &HybridState) -> bool {
        (**self).in_jump_set(t, x)
    }
    fn jump(&self, t: f64, x: &HybridState) -> HybridState {
        (**self).jump(t, x)
    }
    fn jump_margin(&self, t: f64, x: &HybridState) -> Option<f64> {
        (**self).jump_margin(t, x)
    }
}

/// A system described by closures; handy for tests and one-off experiments.
pub struct FnSystem<F, C, D, G> {
    pub dim: usize,
    pub flow: F,
    pub flow_set: C,
    pub jump_set: D,
    pub jump_map: G,
}

impl<F, C, D, G> HybridSystem for FnSystem<F, C, D, G>
where
    F: Fn(f64, &HybridState, &mut StateDerivative) + Send + Sync,
    C: Fn(&HybridState) -> bool + Send + Sync,
    D: Fn(&HybridState) -> bool + Send + Sync,
    G: Fn(&HybridState) -> HybridState + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn flow(&self, t: f64, x: &HybridState, dx: &mut StateDerivative) {
        (self.flow)(t, x, dx)
    }
    fn in_flow_set(&self, _t: f64, x: &HybridState) -> bool {
        (self.flow_set)(x)
    }
    fn in_jump_set(&self, _t: f64, x: &HybridState) -> bool {
        (self.jump_set)(x)
    }
    fn jump(&self, _t: f64, x: &HybridState) -> HybridState {
        (self.jump_map)(x)
    }
}
