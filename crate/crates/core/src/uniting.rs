//! The uniting supervisor: a global momentum flow far from the minimizer, a
//! heavily damped heavy ball near it, and gradient-only hysteresis sets that
//! decide when to switch.
//!
//! Sets, with `g = |grad L(z1)|`:
//!
//! - `U0  = { g <= c~0  and  |z2|^2 / 2 <= d0 }`, where the local flow may run;
//! - `T10 = { g <= c~10 and  |z2|^2     <= d10 }`, where global hands over to local;
//! - `T01 = { gamma (alpha/M^2) g^2 + |z2|^2 / 2 >= c^0 }`, where local hands back.
//!
//! The velocity term of `T10` carries no factor one half, unlike `U0`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::algorithms::{FlowLaw, HeavyBallParams, NesterovNscParams, NesterovScParams};
use crate::error::{require_positive, Error, Result};
use crate::hybrid::{HybridState, HybridSystem, Mode, StateDerivative};
use crate::objective::{GradientOracle, Problem};
use crate::vecops::{norm, norm_sq};

/// Which pair of flows is united. `local` is always a heavy ball.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum UnitingVariant {
    HbfHbf {
        local: HeavyBallParams,
        global: HeavyBallParams,
    },
    NesterovNsc {
        local: HeavyBallParams,
        global: NesterovNscParams,
    },
    NesterovSc {
        local: HeavyBallParams,
        global: NesterovScParams,
    },
}

impl UnitingVariant {
    pub fn name(&self) -> &'static str {
        match self {
            UnitingVariant::HbfHbf { .. } => "hbf_hbf",
            UnitingVariant::NesterovNsc { .. } => "nesterov_nsc",
            UnitingVariant::NesterovSc { .. } => "nesterov_sc",
        }
    }

    pub fn local(&self) -> HeavyBallParams {
        match *self {
            UnitingVariant::HbfHbf { local, .. }
            | UnitingVariant::NesterovNsc { local, .. }
            | UnitingVariant::NesterovSc { local, .. } => local,
        }
    }

    pub fn global_law(&self) -> FlowLaw {
        match *self {
            UnitingVariant::HbfHbf { global, .. } => FlowLaw::HeavyBall(global),
            UnitingVariant::NesterovNsc { global, .. } => FlowLaw::NesterovNsc(global),
            UnitingVariant::NesterovSc { global, .. } => FlowLaw::NesterovSc(global),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.local().validate()?;
        self.global_law().validate()?;
        if let UnitingVariant::HbfHbf { local, global } = self {
            if local.lambda <= global.lambda {
                return Err(Error::invalid(
                    "local.lambda",
                    format!(
                        "local friction must exceed global friction ({} <= {})",
                        local.lambda, global.lambda
                    ),
                ));
            }
        }
        Ok(())
    }
}

/// Raw design constants chosen by the user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignConstants {
    pub eps0: f64,
    pub eps10: f64,
    pub c0: f64,
    pub c10: f64,
    /// Level of `T01`; defaults to `c0`.
    #[serde(default)]
    pub hat_c0: Option<f64>,
}

/// Design constants together with everything derived from them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitingParams {
    pub eps0: f64,
    pub eps10: f64,
    pub c0: f64,
    pub c10: f64,
    pub hat_c0: f64,
    pub alpha: f64,
    pub lipschitz_m: f64,
    pub zeta: Option<f64>,
    pub gamma_local: f64,
    pub c_tilde0: f64,
    pub c_tilde10: f64,
    pub d0: f64,
    pub d10: f64,
}

fn hysteresis(inequality: &'static str, detail: String) -> Error {
    Error::Hysteresis { inequality, detail }
}

/// Fills in `c~0 = eps0 alpha`, `c~10 = eps10 alpha`, `d0`, `d10` and checks
/// the ordering the hysteresis relies on.
pub fn derive_params(raw: &DesignConstants, variant: &UnitingVariant, problem: &Problem) -> Result<UnitingParams> {
    variant.validate()?;
    for (name, v) in [("eps0", raw.eps0), ("eps10", raw.eps10), ("c0", raw.c0), ("c10", raw.c10)] {
        require_positive(name, v)?;
    }
    let alpha = problem.alpha();
    let m = problem.lipschitz_m();
    if raw.eps10 >= raw.eps0 {
        return Err(hysteresis(
            "handover gradient level below the restart level (eps10 < eps0)",
            format!("eps10 = {}, eps0 = {}", raw.eps10, raw.eps0),
        ));
    }
    if raw.c10 >= raw.c0 {
        return Err(hysteresis(
            "handover level below the restart level (c10 < c0)",
            format!("c10 = {}, c0 = {}", raw.c10, raw.c0),
        ));
    }
    let hat_c0 = raw.hat_c0.unwrap_or(raw.c0);
    if !(hat_c0 >= raw.c0) || !hat_c0.is_finite() {
        return Err(hysteresis(
            "restart threshold at least c0 (hat_c0 >= c0)",
            format!("hat_c0 = {hat_c0}, c0 = {}", raw.c0),
        ));
    }

    let gamma_local = variant.local().gamma;
    let c_tilde0 = raw.eps0 * alpha;
    let c_tilde10 = raw.eps10 * alpha;
    let d0 = raw.c0 - gamma_local * c_tilde0 * c_tilde0 / alpha;

    let (zeta, d10) = match *variant {
        UnitingVariant::NesterovNsc { global, .. } => {
            check_same_m(global.lipschitz_m, m)?;
            let ratio = c_tilde10 / alpha;
            (
                Some(global.zeta),
                raw.c10 - ratio * ratio - global.gain() * c_tilde10 * c_tilde10 / alpha,
            )
        }
        UnitingVariant::HbfHbf { global, .. } => (None, 2.0 * raw.c10 - 2.0 * global.gamma * c_tilde10 * c_tilde10 / alpha),
        UnitingVariant::NesterovSc { global, .. } => {
            check_same_m(global.lipschitz_m, m)?;
            let a = global.rate_a();
            let ratio = c_tilde10 / alpha;
            (
                Some(global.zeta),
                raw.c10 - a * a * ratio * ratio - c_tilde10 * c_tilde10 / (alpha * global.m_zeta),
            )
        }
    };

    if !(d0 > 0.0) {
        return Err(hysteresis(
            "positive local velocity level (d0 = c0 - gamma c~0^2 / alpha > 0)",
            format!("d0 = {d0}"),
        ));
    }
    if !(d10 > 0.0) {
        return Err(hysteresis("positive handover velocity level (d10 > 0)", format!("d10 = {d10}")));
    }
    // T10 bounds |z2|^2 by d10 while U0 bounds |z2|^2 / 2 by d0, so the
    // velocity part of T10 lies strictly inside U0 exactly when d10 < 2 d0.
    if !(d10 < 2.0 * d0) {
        return Err(hysteresis(
            "handover velocity set strictly inside the local velocity set (d10 < 2 d0)",
            format!("d10 = {d10}, d0 = {d0}"),
        ));
    }

    Ok(UnitingParams {
        eps0: raw.eps0,
        eps10: raw.eps10,
        c0: raw.c0,
        c10: raw.c10,
        hat_c0,
        alpha,
        lipschitz_m: m,
        zeta,
        gamma_local,
        c_tilde0,
        c_tilde10,
        d0,
        d10,
    })
}

fn check_same_m(flow_m: f64, problem_m: f64) -> Result<()> {
    if (flow_m - problem_m).abs() > 1e-12 * problem_m.max(1.0) {
        return Err(Error::invalid(
            "lipschitz_m",
            format!("global flow uses M = {flow_m} but the objective declares M = {problem_m}"),
        ));
    }
    Ok(())
}

/// Set membership with a signed margin: `margin <= 0` exactly when `inside`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Membership {
    pub inside: bool,
    pub margin: f64,
}

impl Membership {
    fn from_margin(margin: f64) -> Self {
        Membership {
            inside: margin <= 0.0,
            margin,
        }
    }
}

impl UnitingParams {
    pub fn u0_margin(&self, grad_norm: f64, z2: &[f64]) -> f64 {
        (grad_norm - self.c_tilde0).max(0.5 * norm_sq(z2) - self.d0)
    }

    pub fn t10_margin(&self, grad_norm: f64, z2: &[f64]) -> f64 {
        (grad_norm - self.c_tilde10).max(norm_sq(z2) - self.d10)
    }

    /// Margin of `T01` against an explicit level.
    pub fn t01_margin_at(&self, grad_norm: f64, z2: &[f64], level: f64) -> f64 {
        let m = self.lipschitz_m;
        level - (self.gamma_local * self.alpha / (m * m) * grad_norm * grad_norm + 0.5 * norm_sq(z2))
    }

    pub fn t01_margin(&self, grad_norm: f64, z2: &[f64]) -> f64 {
        self.t01_margin_at(grad_norm, z2, self.hat_c0)
    }
}

pub fn in_u0<G: GradientOracle + ?Sized>(p: &UnitingParams, obj: &G, z1: &[f64], z2: &[f64]) -> Membership {
    Membership::from_margin(p.u0_margin(norm(&obj.gradient_vec(0.0, z1)), z2))
}

pub fn in_t10<G: GradientOracle + ?Sized>(p: &UnitingParams, obj: &G, z1: &[f64], z2: &[f64]) -> Membership {
    Membership::from_margin(p.t10_margin(norm(&obj.gradient_vec(0.0, z1)), z2))
}

pub fn in_t01<G: GradientOracle + ?Sized>(p: &UnitingParams, obj: &G, z1: &[f64], z2: &[f64]) -> Membership {
    Membership::from_margin(p.t01_margin(norm(&obj.gradient_vec(0.0, z1)), z2))
}

/// The closed loop `(C, F, D, G)` of the supervisor.
///
/// Mode `q = 0` runs the local heavy ball with the timer frozen at zero, mode
/// `q = 1` runs the global flow with `tau' = 1`. Jumps keep `z`, toggle `q` and
/// reset `tau`.
#[derive(Clone)]
pub struct UnitingSystem {
    variant: UnitingVariant,
    params: UnitingParams,
    local: FlowLaw,
    global: FlowLaw,
    oracle: Arc<dyn GradientOracle>,
}

pub fn build_uniting_system(variant: UnitingVariant, params: UnitingParams, problem: &Problem) -> Result<UnitingSystem> {
    UnitingSystem::new(variant, params, Arc::new(problem.clone()))
}

impl UnitingSystem {
    pub fn new(variant: UnitingVariant, params: UnitingParams, oracle: Arc<dyn GradientOracle>) -> Result<Self> {
        variant.validate()?;
        Ok(UnitingSystem {
            variant,
            params,
            local: FlowLaw::HeavyBall(variant.local()),
            global: variant.global_law(),
            oracle,
        })
    }

    pub fn variant(&self) -> &UnitingVariant {
        &self.variant
    }

    pub fn params(&self) -> &UnitingParams {
        &self.params
    }

    pub fn oracle(&self) -> &Arc<dyn GradientOracle> {
        &self.oracle
    }

    pub fn with_oracle(&self, oracle: Arc<dyn GradientOracle>) -> Self {
        UnitingSystem {
            oracle,
            ..self.clone()
        }
    }

    fn grad_norm(&self, t: f64, z1: &[f64]) -> f64 {
        norm(&self.oracle.gradient_vec(t, z1))
    }
}

impl HybridSystem for UnitingSystem {
    fn dim(&self) -> usize {
        self.oracle.dim()
    }

    fn flow(&self, t: f64, x: &HybridState, dx: &mut StateDerivative) {
        let law = match x.q {
            Mode::Local => &self.local,
            Mode::Global => &self.global,
        };
        law.eval(self.oracle.as_ref(), t, x.tau, &x.z1, &x.z2, &mut dx.dz1, &mut dx.dz2);
        dx.dtau = match x.q {
            Mode::Local => 0.0,
            Mode::Global => 1.0,
        };
    }

    fn in_flow_set(&self, t: f64, x: &HybridState) -> bool {
        let g = self.grad_norm(t, &x.z1);
        match x.q {
            Mode::Local => x.tau == 0.0 && self.params.u0_margin(g, &x.z2) <= 0.0,
            // Closure of the complement of T10: everything but its strict interior.
            Mode::Global => x.tau >= 0.0 && self.params.t10_margin(g, &x.z2) >= 0.0,
        }
    }

    fn in_jump_set(&self, t: f64, x: &HybridState) -> bool {
        match x.q {
            Mode::Local => x.tau == 0.0 && self.params.t01_margin(self.grad_norm(t, &x.z1), &x.z2) <= 0.0,
            Mode::Global => self.params.t10_margin(self.grad_norm(t, &x.z1), &x.z2) <= 0.0,
        }
    }

    fn jump(&self, _t: f64, x: &HybridState) -> HybridState {
        HybridState {
            z1: x.z1.clone(),
            z2: x.z2.clone(),
            q: x.q.toggled(),
            tau: 0.0,
        }
    }

    fn jump_margin(&self, t: f64, x: &HybridState) -> Option<f64> {
        let g = self.grad_norm(t, &x.z1);
        Some(match x.q {
            Mode::Local => self.params.t01_margin(g, &x.z2),
            Mode::Global => self.params.t10_margin(g, &x.z2),
        })
    }
}

/// Outcome of a sampled check of the hysteresis geometry.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct HysteresisReport {
    pub samples: usize,
    /// Samples that landed in `T10`.
    pub t10_hits: usize,
    /// (a) `T10` inside the interior of `U0`.
    pub containment_failures: usize,
    /// (b) `T10` and `T01` disjoint.
    pub overlap_failures: usize,
    /// (c) every `z` in `U0` or in `T01` at level `c0`.
    pub covering_failures: usize,
    /// Up to ten `(z1, z2, check)` counterexamples.
    pub counterexamples: Vec<(Vec<f64>, Vec<f64>, char)>,
}

impl HysteresisReport {
    pub fn containment_ok(&self) -> bool {
        self.containment_failures == 0
    }

    pub fn disjoint_ok(&self) -> bool {
        self.overlap_failures == 0
    }

    pub fn covering_ok(&self) -> bool {
        self.covering_failures == 0
    }

    pub fn all_ok(&self) -> bool {
        self.containment_ok() && self.disjoint_ok() && self.covering_ok()
    }
}

/// Samples `(z1, z2)` uniformly from the box of half-width `radius` around
/// `(center, 0)` and tests the three hysteresis statements.
///
/// Half of the samples are drawn from the smaller box that bounds `T10` so that
/// the containment check sees enough hits.
pub fn validate_hysteresis<G: GradientOracle + ?Sized>(
    p: &UnitingParams,
    obj: &G,
    center: &[f64],
    radius: f64,
    n_samples: usize,
    seed: u64,
) -> HysteresisReport {
    let n = center.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = HysteresisReport {
        samples: n_samples,
        ..Default::default()
    };
    // |grad| <= c~10 forces |z1 - z*| <= eps10, and |z2| <= sqrt(d10).
    let near = (p.eps10 * 1.5, p.d10.sqrt() * 1.5);
    let mut g = vec![0.0; n];
    for k in 0..n_samples {
        let (r1, r2) = if k % 2 == 0 { (radius, radius) } else { near };
        let z1: Vec<f64> = center.iter().map(|c| c + rng.random_range(-r1..=r1)).collect();
        let z2: Vec<f64> = (0..n).map(|_| rng.random_range(-r2..=r2)).collect();
        obj.gradient(0.0, &z1, &mut g);
        let gn = norm(&g);
        let t10 = p.t10_margin(gn, &z2);
        let mut fail = |which: char, counter: &mut usize| {
            *counter += 1;
            if report.counterexamples.len() < 10 {
                report.counterexamples.push((z1.clone(), z2.clone(), which));
            }
        };
        if t10 <= 0.0 {
            report.t10_hits += 1;
            if p.u0_margin(gn, &z2) >= 0.0 {
                fail('a', &mut report.containment_failures);
            }
            if p.t01_margin(gn, &z2) <= 0.0 {
                fail('b', &mut report.overlap_failures);
            }
        }
        if p.u0_margin(gn, &z2) > 0.0 && p.t01_margin_at(gn, &z2, p.c0) > 0.0 {
            fail('c', &mut report.covering_failures);
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybrid::{solve, IntegratorConfig, Termination};
    use crate::objective::make_scalar_quadratic;

    fn quad() -> Problem {
        make_scalar_quadratic(1.0).unwrap().problem().clone()
    }

    fn nsc_variant() -> UnitingVariant {
        UnitingVariant::NesterovNsc {
            local: HeavyBallParams::new(200.0, 2.0 / 3.0).unwrap(),
            global: NesterovNscParams::new(2.0, 2.0).unwrap(),
        }
    }

    fn nsc_design() -> DesignConstants {
        DesignConstants {
            eps0: 10.0,
            eps10: 5.0,
            c0: 7000.0,
            c10: 6819.68,
            hat_c0: None,
        }
    }

    fn nsc_params() -> UnitingParams {
        derive_params(&nsc_design(), &nsc_variant(), &quad()).unwrap()
    }

    #[test]
    fn nesterov_nsc_constants() {
        let p = nsc_params();
        assert_eq!(p.c_tilde0, 10.0);
        assert_eq!(p.c_tilde10, 5.0);
        // d0 = 7000 - (2/3) 100 ; d10 = 6819.68 - 25 - 2 * 25
        assert!((p.d0 - 6933.333_333).abs() < 1e-3);
        assert!((p.d10 - 6744.68).abs() < 1e-9);
        assert_eq!(p.hat_c0, 7000.0);
    }

    #[test]
    fn hbf_hbf_constants() {
        let v = UnitingVariant::HbfHbf {
            local: HeavyBallParams::new(30.0, 0.5).unwrap(),
            global: HeavyBallParams::new(0.2, 0.5).unwrap(),
        };
        let raw = DesignConstants {
            eps0: 12.5,
            eps10: 6.3,
            c0: 1200.0,
            c10: 925.0,
            hat_c0: Some(1201.0),
        };
        let p = derive_params(&raw, &v, &quad()).unwrap();
        assert_eq!(p.c_tilde0, 12.5);
        assert!((p.d0 - 1121.875).abs() < 1e-9);
        // 1850 - 39.69
        assert!((p.d10 - 1810.31).abs() < 1e-9);
        assert_eq!(p.hat_c0, 1201.0);
    }

    #[test]
    fn nesterov_sc_constants() {
        let v = UnitingVariant::NesterovSc {
            local: HeavyBallParams::new(40.0, 2.0 / 3.0).unwrap(),
            global: NesterovScParams::new(0.4, 2.0, 1.0).unwrap(),
        };
        let raw = DesignConstants {
            eps0: 20.0,
            eps10: 15.0,
            c0: 20000.0,
            c10: 8700.0,
            hat_c0: Some(20001.0),
        };
        let p = derive_params(&raw, &v, &quad()).unwrap();
        // 20000 - (2/3) 400 ; 8700 - 0.25 * 225 - 225 / 0.32
        assert!((p.d0 - 19733.333_333).abs() < 1e-3);
        assert!((p.d10 - 7940.625).abs() < 1e-9);
    }

    #[test]
    fn ordering_violations_name_the_inequality() {
        let mut raw = nsc_design();
        raw.eps10 = raw.eps0;
        match derive_params(&raw, &nsc_variant(), &quad()) {
            Err(Error::Hysteresis { inequality, .. }) => assert!(inequality.contains("eps10 < eps0")),
            other => panic!("expected hysteresis error, got {other:?}"),
        }
        let mut raw = nsc_design();
        raw.c10 = 7000.0;
        assert!(matches!(derive_params(&raw, &nsc_variant(), &quad()), Err(Error::Hysteresis { .. })));
        let mut raw = nsc_design();
        raw.c0 = 60.0;
        raw.c10 = 50.0;
        match derive_params(&raw, &nsc_variant(), &quad()) {
            Err(Error::Hysteresis { inequality, .. }) => assert!(inequality.contains("d0")),
            other => panic!("expected hysteresis error, got {other:?}"),
        }
    }

    #[test]
    fn set_examples() {
        let p = nsc_params();
        let obj = quad();
        assert!(in_u0(&p, &obj, &[0.0], &[0.0]).inside);
        let edge = in_u0(&p, &obj, &[5.0], &[0.0]);
        assert!(edge.inside && edge.margin == 0.0);
        assert!(!in_u0(&p, &obj, &[50.0], &[0.0]).inside);

        assert!(in_t10(&p, &obj, &[0.0], &[0.0]).inside);
        assert!(in_t10(&p, &obj, &[2.5], &[0.0]).inside);

        assert!(!in_t01(&p, &obj, &[0.0], &[0.0]).inside);
        let far = in_t01(&p, &obj, &[250.0], &[0.0]);
        assert!(far.inside);
        assert!((far.margin - (7000.0 - 2.0 / 3.0 * 0.25 * 250_000.0)).abs() < 1e-6);
    }

    #[test]
    fn t10_velocity_has_no_half() {
        let p = nsc_params();
        let v = (p.d10 * 0.99).sqrt();
        assert!(in_t10(&p, &quad(), &[0.0], &[v]).inside);
        let v = (p.d10 * 1.01).sqrt();
        assert!(!in_t10(&p, &quad(), &[0.0], &[v]).inside);
    }

    #[test]
    fn global_start_jumps_once_and_ends_local() {
        let sys = build_uniting_system(nsc_variant(), nsc_params(), &quad()).unwrap();
        let x0 = HybridState::scalar(50.0, 0.0, Mode::Global, 0.0);
        let arc = solve(&sys, &x0, &IntegratorConfig::with_t_max(3.0), &mut []).unwrap();
        assert_eq!(arc.jump_count(), 1);
        assert_eq!(arc.final_state().q, Mode::Local);
        assert_eq!(arc.final_state().tau, 0.0);
        assert_eq!(arc.termination, Termination::TMaxReached);
    }

    #[test]
    fn local_start_in_t01_restarts_global() {
        let sys = build_uniting_system(nsc_variant(), nsc_params(), &quad()).unwrap();
        let x0 = HybridState::scalar(250.0, 0.0, Mode::Local, 0.0);
        assert!(sys.in_jump_set(0.0, &x0));
        let arc = solve(&sys, &x0, &IntegratorConfig::with_t_max(2.0), &mut []).unwrap();
        assert!(arc.jump_count() >= 1);
        assert_eq!(arc.jumps[0].t, 0.0);
        assert_eq!(arc.jumps[0].state_after.q, Mode::Global);
    }

    #[test]
    fn start_at_minimizer_never_jumps() {
        let p = nsc_params();
        let sys = build_uniting_system(nsc_variant(), p, &quad()).unwrap();
        let arc = solve(&sys, &HybridState::scalar(0.0, 0.0, Mode::Local, 0.0), &IntegratorConfig::with_t_max(1.0), &mut []).unwrap();
        assert_eq!(arc.jump_count(), 0);
        for s in &arc.samples {
            assert!(in_u0(&p, &quad(), &s.state.z1, &s.state.z2).inside);
        }
    }

    #[test]
    fn sampled_hysteresis_geometry() {
        let p = nsc_params();
        let report = validate_hysteresis(&p, &quad(), &[0.0], 200.0, 100_000, 7);
        assert!(report.t10_hits > 1000);
        assert!(report.containment_ok());
        assert!(report.disjoint_ok());
        // The literal sets leave a gap: e.g. z = (6, 0) is outside U0
        // (|grad| = 12 > 10) and below the T01 level (24 < 7000).
        assert!(!report.covering_ok());
        let gap = in_u0(&p, &quad(), &[6.0], &[0.0]);
        assert!(!gap.inside && !in_t01(&p, &quad(), &[6.0], &[0.0]).inside);
    }
}
