//! Flow fields of the individual optimization ODEs, and their standalone
//! closed loops.
//!
//! Every second-order field has the form `z1' = z2`, `z2' = u(z, tau)`; the
//! functions here compute `u` from gradient measurements only.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{require_positive, Error, Result};
use crate::hybrid::{HybridState, HybridSystem, StateDerivative};
use crate::objective::{GradientOracle, Problem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeavyBallParams {
    pub lambda: f64,
    pub gamma: f64,
}

impl HeavyBallParams {
    pub fn new(lambda: f64, gamma: f64) -> Result<Self> {
        let p = HeavyBallParams { lambda, gamma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        require_positive("lambda", self.lambda)?;
        require_positive("gamma", self.gamma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NesterovNscParams {
    pub zeta: f64,
    pub lipschitz_m: f64,
}

impl NesterovNscParams {
    pub fn new(zeta: f64, lipschitz_m: f64) -> Result<Self> {
        let p = NesterovNscParams { zeta, lipschitz_m };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        require_positive("zeta", self.zeta)?;
        require_positive("lipschitz_m", self.lipschitz_m)
    }

    /// Gradient gain `zeta^2 / M`.
    pub fn gain(&self) -> f64 {
        self.zeta * self.zeta / self.lipschitz_m
    }
}

/// Strongly convex Nesterov flow with constant damping `d` and lookahead `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NesterovScParams {
    pub zeta: f64,
    pub lipschitz_m: f64,
    pub kappa: f64,
    pub d: f64,
    pub beta: f64,
    /// `M zeta^2`
    pub m_zeta: f64,
}

impl NesterovScParams {
    pub fn new(zeta: f64, lipschitz_m: f64, kappa: f64) -> Result<Self> {
        require_positive("zeta", zeta)?;
        require_positive("lipschitz_m", lipschitz_m)?;
        if !(kappa.is_finite() && kappa >= 1.0) {
            return Err(Error::invalid("kappa", format!("condition number must be >= 1, got {kappa}")));
        }
        let s = kappa.sqrt();
        Ok(NesterovScParams {
            zeta,
            lipschitz_m,
            kappa,
            d: 1.0 / (s + 1.0),
            beta: (s - 1.0) / (s + 1.0),
            m_zeta: lipschitz_m * zeta * zeta,
        })
    }

    /// Takes `M` and `kappa = M / mu` from the problem; fails without `mu`.
    pub fn for_problem(zeta: f64, problem: &Problem) -> Result<Self> {
        let kappa = problem
            .condition_number()
            .ok_or_else(|| Error::invalid("mu", "the strongly convex flow needs a strong convexity constant"))?;
        Self::new(zeta, problem.lipschitz_m(), kappa)
    }

    /// Exponential rate `a = d + beta / (2 kappa) = 1/sqrt(kappa) - 1/(2 kappa)`.
    pub fn rate_a(&self) -> f64 {
        self.d + self.beta / (2.0 * self.kappa)
    }
}

/// Triple-momentum ODE under its ideal tuning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripleMomentumParams {
    pub rho: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub sigma: f64,
    pub delta: f64,
    pub eta: f64,
}

impl TripleMomentumParams {
    pub fn ideal(kappa: f64, lipschitz_m: f64) -> Result<Self> {
        require_positive("lipschitz_m", lipschitz_m)?;
        if !(kappa.is_finite() && kappa > 1.0) {
            return Err(Error::invalid(
                "kappa",
                format!("ideal tuning degenerates unless the condition number exceeds 1, got {kappa}"),
            ));
        }
        let rho = 1.0 - 1.0 / kappa;
        let gamma = (1.0 + rho) / lipschitz_m;
        let lambda = rho * rho / (2.0 - rho);
        let sigma = rho * rho / ((1.0 + rho) * (2.0 - rho));
        let delta = rho * rho / (1.0 - rho * rho);
        let eta = ((1.0 - lambda) / (gamma.sqrt() * (1.0 + lambda))).powi(2);
        Ok(TripleMomentumParams {
            rho,
            gamma,
            lambda,
            sigma,
            delta,
            eta,
        })
    }
}

/// Exponential-rate constants of the heavy ball: `psi = m alpha gamma / lambda`,
/// `nu = psi (psi - lambda)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateParams {
    pub m: f64,
    pub psi: f64,
    pub nu: f64,
}

impl RateParams {
    pub fn new(m: f64, alpha: f64, hb: &HeavyBallParams) -> Result<Self> {
        if !(m > 0.0 && m < 1.0) {
            return Err(Error::invalid("m", format!("must lie in (0, 1), got {m}")));
        }
        require_positive("alpha", alpha)?;
        hb.validate()?;
        let psi = m * alpha * hb.gamma / hb.lambda;
        Ok(RateParams {
            m,
            psi,
            nu: psi * (psi - hb.lambda),
        })
    }

    /// Decay exponent `(1 - m) psi` of the alternate heavy-ball Lyapunov function.
    pub fn decay(&self) -> f64 {
        (1.0 - self.m) * self.psi
    }
}

pub fn dbar(t: f64) -> f64 {
    3.0 / (2.0 * (t + 2.0))
}

pub fn betabar(t: f64) -> f64 {
    (t - 1.0) / (t + 2.0)
}

pub fn abar(tau: f64) -> f64 {
    2.0 / (tau + 2.0)
}

/// A second-order (or gradient-descent) flow law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "snake_case")]
pub enum FlowLaw {
    HeavyBall(HeavyBallParams),
    NesterovNsc(NesterovNscParams),
    NesterovSc(NesterovScParams),
    GradientDescent { gamma: f64 },
    TripleMomentum(TripleMomentumParams),
}

impl FlowLaw {
    pub fn name(&self) -> &'static str {
        match self {
            FlowLaw::HeavyBall(_) => "heavy_ball",
            FlowLaw::NesterovNsc(_) => "nesterov_nsc",
            FlowLaw::NesterovSc(_) => "nesterov_sc",
            FlowLaw::GradientDescent { .. } => "gradient_descent",
            FlowLaw::TripleMomentum(_) => "triple_momentum",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            FlowLaw::HeavyBall(p) => p.validate(),
            FlowLaw::NesterovNsc(p) => p.validate(),
            FlowLaw::NesterovSc(p) => NesterovScParams::new(p.zeta, p.lipschitz_m, p.kappa).map(|_| ()),
            FlowLaw::GradientDescent { gamma } => require_positive("gamma", *gamma),
            FlowLaw::TripleMomentum(p) => {
                if p.rho > 0.0 && p.eta.is_finite() && p.gamma > 0.0 {
                    Ok(())
                } else {
                    Err(Error::invalid("triple_momentum", "tuning must have rho > 0 and finite eta"))
                }
            }
        }
    }

    /// Writes `(z1', z2')` into `dz1`, `dz2`. `tau` is the internal clock of
    /// time-varying laws; `t` is passed through to the oracle.
    pub fn eval<G: GradientOracle + ?Sized>(
        &self,
        oracle: &G,
        t: f64,
        tau: f64,
        z1: &[f64],
        z2: &[f64],
        dz1: &mut [f64],
        dz2: &mut [f64],
    ) {
        // `dz1` doubles as scratch for the lookahead point before it is set to `z2`.
        let lookahead = |dz1: &mut [f64], dz2: &mut [f64], shift: f64| {
            for ((w, a), b) in dz1.iter_mut().zip(z1).zip(z2) {
                *w = a + shift * b;
            }
            oracle.gradient(t, dz1, dz2);
        };
        match *self {
            FlowLaw::HeavyBall(p) => {
                oracle.gradient(t, z1, dz2);
                for (u, v) in dz2.iter_mut().zip(z2) {
                    *u = -p.lambda * v - p.gamma * *u;
                }
                dz1.copy_from_slice(z2);
            }
            FlowLaw::NesterovNsc(p) => {
                lookahead(dz1, dz2, betabar(tau));
                let (d, c) = (dbar(tau), p.gain());
                for (u, v) in dz2.iter_mut().zip(z2) {
                    *u = -2.0 * d * v - c * *u;
                }
                dz1.copy_from_slice(z2);
            }
            FlowLaw::NesterovSc(p) => {
                lookahead(dz1, dz2, p.beta);
                let c = 1.0 / p.m_zeta;
                for (u, v) in dz2.iter_mut().zip(z2) {
                    *u = -2.0 * p.d * v - c * *u;
                }
                dz1.copy_from_slice(z2);
            }
            FlowLaw::GradientDescent { gamma } => {
                oracle.gradient(t, z1, dz1);
                for u in dz1.iter_mut() {
                    *u *= -gamma;
                }
                dz2.fill(0.0);
            }
            FlowLaw::TripleMomentum(p) => {
                lookahead(dz1, dz2, p.gamma.sqrt() * p.sigma);
                let damping = 2.0 * p.eta.sqrt();
                let c = 1.0 + (p.eta * p.gamma).sqrt();
                for (u, v) in dz2.iter_mut().zip(z2) {
                    *u = -damping * v - c * *u;
                }
                dz1.copy_from_slice(z2);
            }
        }
    }

    fn eval_vec<G: GradientOracle + ?Sized>(&self, oracle: &G, tau: f64, z1: &[f64], z2: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut dz1 = vec![0.0; z1.len()];
        let mut dz2 = vec![0.0; z1.len()];
        self.eval(oracle, 0.0, tau, z1, z2, &mut dz1, &mut dz2);
        (dz1, dz2)
    }
}

/// `(z2, -lambda z2 - gamma grad L(z1))`
pub fn heavy_ball_field<G: GradientOracle + ?Sized>(p: &HeavyBallParams, obj: &G, z1: &[f64], z2: &[f64]) -> (Vec<f64>, Vec<f64>) {
    FlowLaw::HeavyBall(*p).eval_vec(obj, 0.0, z1, z2)
}

/// `(z2, -2 dbar(tau) z2 - (zeta^2/M) grad L(z1 + betabar(tau) z2))`
pub fn nesterov_nsc_field<G: GradientOracle + ?Sized>(
    p: &NesterovNscParams,
    obj: &G,
    z1: &[f64],
    z2: &[f64],
    tau: f64,
) -> (Vec<f64>, Vec<f64>) {
    FlowLaw::NesterovNsc(*p).eval_vec(obj, tau, z1, z2)
}

/// `(z2, -2 d z2 - (1/(M zeta^2)) grad L(z1 + beta z2))`
pub fn nesterov_sc_field<G: GradientOracle + ?Sized>(p: &NesterovScParams, obj: &G, z1: &[f64], z2: &[f64]) -> (Vec<f64>, Vec<f64>) {
    FlowLaw::NesterovSc(*p).eval_vec(obj, 0.0, z1, z2)
}

/// `-gamma grad L(z1)`
pub fn gradient_descent_field<G: GradientOracle + ?Sized>(gamma: f64, obj: &G, z1: &[f64]) -> Result<Vec<f64>> {
    require_positive("gamma", gamma)?;
    let zeros = vec![0.0; z1.len()];
    Ok(FlowLaw::GradientDescent { gamma }.eval_vec(obj, 0.0, z1, &zeros).0)
}

/// `(z2, -2 sqrt(eta) z2 - (1 + sqrt(eta gamma)) grad L(z1 + sqrt(gamma) sigma z2))`
pub fn triple_momentum_field<G: GradientOracle + ?Sized>(
    p: &TripleMomentumParams,
    obj: &G,
    z1: &[f64],
    z2: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    FlowLaw::TripleMomentum(*p).eval_vec(obj, 0.0, z1, z2)
}

/// A single flow law run on its own: flow everywhere, never jump, `tau' = 1`.
#[derive(Clone)]
pub struct ClosedLoop {
    law: FlowLaw,
    oracle: Arc<dyn GradientOracle>,
}

impl ClosedLoop {
    pub fn new(law: FlowLaw, oracle: Arc<dyn GradientOracle>) -> Result<Self> {
        law.validate()?;
        Ok(ClosedLoop { law, oracle })
    }

    pub fn law(&self) -> &FlowLaw {
        &self.law
    }

    pub fn oracle(&self) -> &Arc<dyn GradientOracle> {
        &self.oracle
    }

    pub fn with_oracle(&self, oracle: Arc<dyn GradientOracle>) -> Self {
        ClosedLoop {
            law: self.law,
            oracle,
        }
    }
}

pub fn as_closed_loop(law: FlowLaw, problem: &Problem) -> Result<ClosedLoop> {
    ClosedLoop::new(law, Arc::new(problem.clone()))
}

impl HybridSystem for ClosedLoop {
    fn dim(&self) -> usize {
        self.oracle.dim()
    }

    fn flow(&self, t: f64, x: &HybridState, dx: &mut StateDerivative) {
        self.law
            .eval(self.oracle.as_ref(), t, x.tau, &x.z1, &x.z2, &mut dx.dz1, &mut dx.dz2);
        dx.dtau = 1.0;
    }

    fn in_flow_set(&self, _t: f64, _x: &HybridState) -> bool {
        true
    }

    fn in_jump_set(&self, _t: f64, _x: &HybridState) -> bool {
        false
    }

    fn jump(&self, _t: f64, x: &HybridState) -> HybridState {
        x.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybrid::{solve, IntegratorConfig, Mode};
    use crate::objective::make_scalar_quadratic;

    fn quad() -> Problem {
        make_scalar_quadratic(1.0).unwrap().problem().clone()
    }

    #[test]
    fn heavy_ball_values() {
        let p = HeavyBallParams::new(200.0, 2.0 / 3.0).unwrap();
        let (d1, d2) = heavy_ball_field(&p, &quad(), &[50.0], &[0.0]);
        assert_eq!(d1, vec![0.0]);
        assert!((d2[0] + 200.0 / 3.0).abs() < 1e-12);
        let p = HeavyBallParams::new(1.0, 1.0).unwrap();
        assert_eq!(heavy_ball_field(&p, &quad(), &[1.0], &[1.0]).1, vec![-3.0]);
        assert_eq!(heavy_ball_field(&p, &quad(), &[0.0], &[0.0]), (vec![0.0], vec![0.0]));
        assert!(HeavyBallParams::new(0.0, 1.0).is_err());
    }

    #[test]
    fn time_varying_coefficients() {
        assert_eq!((dbar(0.0), betabar(0.0), abar(0.0)), (0.75, -0.5, 1.0));
        assert_eq!(betabar(1.0), 0.0);
        for t in [0.0, 1.0, 10.0, 100.0] {
            assert!(dbar(t) <= 0.75 && betabar(t).abs() <= 1.0);
        }
    }

    #[test]
    fn nesterov_nsc_values() {
        let p = NesterovNscParams::new(2.0, 2.0).unwrap();
        assert_eq!(nesterov_nsc_field(&p, &quad(), &[50.0], &[0.0], 0.0).1, vec![-200.0]);
        let p = NesterovNscParams::new(1.0, 2.0).unwrap();
        assert_eq!(nesterov_nsc_field(&p, &quad(), &[1.0], &[0.0], 1.0).1, vec![-1.0]);
        for tau in [0.0, 0.5, 3.0] {
            assert_eq!(nesterov_nsc_field(&p, &quad(), &[0.0], &[0.0], tau), (vec![0.0], vec![0.0]));
        }
    }

    #[test]
    fn nesterov_sc_values() {
        let p = NesterovScParams::new(0.4, 2.0, 1.0).unwrap();
        assert_eq!((p.d, p.beta), (0.5, 0.0));
        assert_eq!(p.rate_a(), 0.5);
        assert!((p.m_zeta - 0.32).abs() < 1e-15);
        let (_, d2) = nesterov_sc_field(&p, &quad(), &[50.0], &[0.0]);
        assert!((d2[0] + 312.5).abs() < 1e-9);
        for kappa in [1.0, 2.0, 10.0, 100.0] {
            let p = NesterovScParams::new(1.0, 2.0, kappa).unwrap();
            assert!((2.0 * p.d + p.beta - 1.0).abs() < 1e-12);
            let s = kappa.sqrt();
            assert!((p.rate_a() - (1.0 / s - 0.5 / kappa)).abs() < 1e-12);
        }
        let no_mu = crate::objective::ObjectiveSpec::custom(
            std::sync::Arc::new(crate::objective::BuiltinObjective::ScalarQuadratic { a: 1.0 }),
            vec![0.0],
            0.0,
            1.0,
            2.0,
            None,
        )
        .unwrap();
        assert!(NesterovScParams::for_problem(0.4, no_mu.problem()).is_err());
    }

    #[test]
    fn gradient_descent_values() {
        assert_eq!(gradient_descent_field(1.0, &quad(), &[1.0]).unwrap(), vec![-2.0]);
        assert_eq!(gradient_descent_field(1.0, &quad(), &[0.0]).unwrap(), vec![0.0]);
        assert!(gradient_descent_field(0.0, &quad(), &[1.0]).is_err());
    }

    #[test]
    fn triple_momentum_tuning() {
        let p = TripleMomentumParams::ideal(2.0, 2.0).unwrap();
        assert_eq!(p.rho, 0.5);
        assert!((p.lambda - 1.0 / 6.0).abs() < 1e-15);
        assert!((p.delta - 1.0 / 3.0).abs() < 1e-15);
        assert!(p.eta > 0.0 && p.eta <= 2.0);
        assert_eq!(triple_momentum_field(&p, &quad(), &[0.0], &[0.0]), (vec![0.0], vec![0.0]));
        assert!(TripleMomentumParams::ideal(1.0, 2.0).is_err());
    }

    #[test]
    fn rate_params() {
        let hb = HeavyBallParams::new(200.0, 2.0 / 3.0).unwrap();
        let r = RateParams::new(0.5, 1.0, &hb).unwrap();
        assert!((r.psi - 1.0 / 600.0).abs() < 1e-15);
        assert!(r.nu < 0.0);
    }

    #[test]
    fn closed_loops_run_clock_and_never_jump() {
        let laws = [
            FlowLaw::HeavyBall(HeavyBallParams::new(1.0, 1.0).unwrap()),
            FlowLaw::NesterovNsc(NesterovNscParams::new(2.0, 2.0).unwrap()),
            FlowLaw::NesterovSc(NesterovScParams::new(0.4, 2.0, 1.0).unwrap()),
            FlowLaw::GradientDescent { gamma: 0.5 },
            FlowLaw::TripleMomentum(TripleMomentumParams::ideal(2.0, 2.0).unwrap()),
        ];
        for law in laws {
            let sys = as_closed_loop(law, &quad()).unwrap();
            let cfg = IntegratorConfig::with_t_max(1.0);
            let arc = solve(&sys, &HybridState::scalar(0.0, 0.0, Mode::Global, 0.0), &cfg, &mut []).unwrap();
            assert_eq!(arc.jump_count(), 0, "{}", law.name());
            for s in &arc.samples {
                assert!((s.state.tau - s.time.t).abs() < 1e-9);
                assert!(s.state.z1[0].abs() < 1e-8 && s.state.z2[0].abs() < 1e-8);
            }
        }
    }
}
