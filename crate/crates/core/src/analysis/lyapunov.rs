use crate::algorithms::abar;
use crate::hybrid::{HybridState, HybridTime, Monitor};
use crate::objective::ObjectiveSpec;
use crate::vecops::{dist, norm_sq};

use super::rates::nesterov_envelope;

/// `gamma (L(z1) - L*) + |z2|^2 / 2`
pub fn v0(obj: &ObjectiveSpec, gamma: f64, z1: &[f64], z2: &[f64]) -> f64 {
    gamma * obj.gap(z1) + 0.5 * norm_sq(z2)
}

/// `|abar(tau)(z1 - z1*) + z2|^2 / 2 + (zeta^2/M)(L(z1) - L*)`
pub fn v1(obj: &ObjectiveSpec, zeta: f64, z1: &[f64], z2: &[f64], tau: f64) -> f64 {
    let a = abar(tau);
    let s: f64 = z1
        .iter()
        .zip(obj.minimizer())
        .zip(z2)
        .map(|((x, xs), v)| {
            let w = a * (x - xs) + v;
            w * w
        })
        .sum();
    0.5 * s + zeta * zeta / obj.lipschitz_m() * obj.gap(z1)
}

/// `gamma (L - L*) + |psi (z1 - z1*) + z2|^2 / 2 + (nu/2) |z1 - z1*|^2`
pub fn v_alt(obj: &ObjectiveSpec, gamma: f64, psi: f64, nu: f64, z1: &[f64], z2: &[f64]) -> f64 {
    let s: f64 = z1
        .iter()
        .zip(obj.minimizer())
        .zip(z2)
        .map(|((x, xs), v)| {
            let w = psi * (x - xs) + v;
            w * w
        })
        .sum();
    let d = dist(z1, obj.minimizer());
    gamma * obj.gap(z1) + 0.5 * s + 0.5 * nu * d * d
}

/// A named monitor backed by a closure.
pub struct FnMonitor<F> {
    name: String,
    f: F,
}

impl<F> FnMonitor<F>
where
    F: FnMut(HybridTime, &HybridState) -> f64 + Send,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        FnMonitor { name: name.into(), f }
    }
}

impl<F> Monitor for FnMonitor<F>
where
    F: FnMut(HybridTime, &HybridState) -> f64 + Send,
{
    fn name(&self) -> String {
        self.name.clone()
    }

    fn observe(&mut self, time: HybridTime, x: &HybridState) -> f64 {
        (self.f)(time, x)
    }
}

pub fn v0_monitor(obj: &ObjectiveSpec, gamma: f64) -> Box<dyn Monitor> {
    let obj = obj.clone();
    Box::new(FnMonitor::new("V0", move |_, x: &HybridState| v0(&obj, gamma, &x.z1, &x.z2)))
}

/// Evaluated with the state's own timer `tau`.
pub fn v1_monitor(obj: &ObjectiveSpec, zeta: f64) -> Box<dyn Monitor> {
    let obj = obj.clone();
    Box::new(FnMonitor::new("V1", move |_, x: &HybridState| v1(&obj, zeta, &x.z1, &x.z2, x.tau)))
}

pub fn valt_monitor(obj: &ObjectiveSpec, gamma: f64, psi: f64, nu: f64) -> Box<dyn Monitor> {
    let obj = obj.clone();
    Box::new(FnMonitor::new("Valt", move |_, x: &HybridState| v_alt(&obj, gamma, psi, nu, &x.z1, &x.z2)))
}

pub fn gap_monitor(obj: &ObjectiveSpec) -> Box<dyn Monitor> {
    let obj = obj.clone();
    Box::new(FnMonitor::new("L_gap", move |_, x: &HybridState| obj.gap(&x.z1)))
}

/// The `9c/(tau+2)^2` envelope on `(zeta^2/M)(L - L*)` from the given initial
/// state, `NaN` while `tau < 1` where it is not claimed.
pub fn envelope_nesterov_monitor(obj: &ObjectiveSpec, zeta: f64, z1_0: &[f64], z2_0: &[f64]) -> Box<dyn Monitor> {
    let obj = obj.clone();
    let (z1_0, z2_0) = (z1_0.to_vec(), z2_0.to_vec());
    Box::new(FnMonitor::new("envelope_nesterov_nsc", move |_, x: &HybridState| {
        if x.tau < 1.0 {
            f64::NAN
        } else {
            nesterov_envelope(x.tau, zeta, obj.lipschitz_m(), &z1_0, &z2_0, obj.minimizer())
        }
    }))
}
