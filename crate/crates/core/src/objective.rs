//! Objective functions and the constants the supervisor is designed from.
//!
//! An [`ObjectiveSpec`] bundles the function with its structural constants
//! (quadratic growth `alpha`, gradient Lipschitz constant `M`, optional strong
//! convexity `mu`) and with the minimizer metadata. Algorithms and supervisor
//! predicates only ever see the [`Problem`] view, which has no access to the
//! minimizer; measurement code reads the minimizer from the spec itself.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{require_positive, Error, Result};
use crate::vecops::{dist, norm};

/// A differentiable objective `L : R^n -> R`.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, z1: &[f64]) -> f64;
    fn gradient(&self, z1: &[f64], out: &mut [f64]);
}

/// Gradient measurements as consumed by flows and supervisor predicates.
///
/// `t` is the accumulated flow time of the enclosing solve. Nominal oracles
/// ignore it; perturbed oracles use it to index their noise.
pub trait GradientOracle: Send + Sync {
    fn dim(&self) -> usize;
    fn gradient(&self, t: f64, z1: &[f64], out: &mut [f64]);

    fn gradient_vec(&self, t: f64, z1: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        self.gradient(t, z1, &mut g);
        g
    }
}

/// Builtin quadratic objectives used by the experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BuiltinObjective {
    /// `L(z) = a z^2` in one dimension.
    ScalarQuadratic { a: f64 },
    /// `L(z) = sum_i a_i z_i^2`.
    DiagonalQuadratic { coefficients: Vec<f64> },
    /// `L(z) = |z - center|^2 + offset`.
    ShiftedQuadratic { center: Vec<f64>, offset: f64 },
}

impl BuiltinObjective {
    fn validate(&self) -> Result<()> {
        match self {
            BuiltinObjective::ScalarQuadratic { a } => require_positive("a", *a),
            BuiltinObjective::DiagonalQuadratic { coefficients } => {
                if coefficients.is_empty() {
                    return Err(Error::invalid("coefficients", "must not be empty"));
                }
                coefficients
                    .iter()
                    .try_for_each(|&c| require_positive("coefficients", c))
            }
            BuiltinObjective::ShiftedQuadratic { center, offset } => {
                if center.is_empty() {
                    return Err(Error::invalid("center", "must not be empty"));
                }
                if center.iter().chain([offset]).any(|v| !v.is_finite()) {
                    return Err(Error::invalid("center", "entries must be finite"));
                }
                Ok(())
            }
        }
    }

    fn minimizer(&self) -> Vec<f64> {
        match self {
            BuiltinObjective::ScalarQuadratic { .. } => vec![0.0],
            BuiltinObjective::DiagonalQuadratic { coefficients } => vec![0.0; coefficients.len()],
            BuiltinObjective::ShiftedQuadratic { center, .. } => center.clone(),
        }
    }

    fn min_value(&self) -> f64 {
        match self {
            BuiltinObjective::ShiftedQuadratic { offset, .. } => *offset,
            _ => 0.0,
        }
    }

    /// `(alpha, M, mu)`
    fn constants(&self) -> (f64, f64, f64) {
        match self {
            BuiltinObjective::ScalarQuadratic { a } => (*a, 2.0 * a, 2.0 * a),
            BuiltinObjective::DiagonalQuadratic { coefficients } => {
                let lo = coefficients.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = coefficients.iter().copied().fold(0.0, f64::max);
                (lo, 2.0 * hi, 2.0 * lo)
            }
            BuiltinObjective::ShiftedQuadratic { .. } => (1.0, 2.0, 2.0),
        }
    }
}

impl Objective for BuiltinObjective {
    fn dim(&self) -> usize {
        match self {
            BuiltinObjective::ScalarQuadratic { .. } => 1,
            BuiltinObjective::DiagonalQuadratic { coefficients } => coefficients.len(),
            BuiltinObjective::ShiftedQuadratic { center, .. } => center.len(),
        }
    }

    fn value(&self, z1: &[f64]) -> f64 {
        match self {
            BuiltinObjective::ScalarQuadratic { a } => a * z1[0] * z1[0],
            BuiltinObjective::DiagonalQuadratic { coefficients } => {
                coefficients.iter().zip(z1).map(|(a, z)| a * z * z).sum()
            }
            BuiltinObjective::ShiftedQuadratic { center, offset } => {
                let d = dist(z1, center);
                d * d + offset
            }
        }
    }

    fn gradient(&self, z1: &[f64], out: &mut [f64]) {
        match self {
            BuiltinObjective::ScalarQuadratic { a } => out[0] = 2.0 * a * z1[0],
            BuiltinObjective::DiagonalQuadratic { coefficients } => {
                for ((o, a), z) in out.iter_mut().zip(coefficients).zip(z1) {
                    *o = 2.0 * a * z;
                }
            }
            BuiltinObjective::ShiftedQuadratic { center, .. } => {
                for ((o, c), z) in out.iter_mut().zip(center).zip(z1) {
                    *o = 2.0 * (z - c);
                }
            }
        }
    }
}

/// Algorithm-facing view of an objective: values, gradients and the design
/// constants, but not the minimizer.
#[derive(Clone)]
pub struct Problem {
    objective: Arc<dyn Objective>,
    alpha: f64,
    lipschitz_m: f64,
    mu: Option<f64>,
}

impl Problem {
    pub fn value(&self, z1: &[f64]) -> f64 {
        self.objective.value(z1)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn lipschitz_m(&self) -> f64 {
        self.lipschitz_m
    }

    pub fn mu(&self) -> Option<f64> {
        self.mu
    }

    /// Condition number `M / mu`, when `mu` is known.
    pub fn condition_number(&self) -> Option<f64> {
        self.mu.map(|mu| self.lipschitz_m / mu)
    }
}

impl GradientOracle for Problem {
    fn dim(&self) -> usize {
        self.objective.dim()
    }

    fn gradient(&self, _t: f64, z1: &[f64], out: &mut [f64]) {
        self.objective.gradient(z1, out);
    }
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("dim", &self.objective.dim())
            .field("alpha", &self.alpha)
            .field("lipschitz_m", &self.lipschitz_m)
            .field("mu", &self.mu)
            .finish()
    }
}

/// An objective together with its constants and minimizer metadata.
#[derive(Clone, Debug)]
pub struct ObjectiveSpec {
    problem: Problem,
    minimizer: Vec<f64>,
    min_value: f64,
    builtin: Option<BuiltinObjective>,
}

impl ObjectiveSpec {
    pub fn builtin(kind: BuiltinObjective) -> Result<Self> {
        kind.validate()?;
        let (alpha, lipschitz_m, mu) = kind.constants();
        Ok(ObjectiveSpec {
            minimizer: kind.minimizer(),
            min_value: kind.min_value(),
            problem: Problem {
                objective: Arc::new(kind.clone()),
                alpha,
                lipschitz_m,
                mu: Some(mu),
            },
            builtin: Some(kind),
        })
    }

    /// Wraps a user objective. The constants are taken on trust; call
    /// [`ObjectiveSpec::verify_sampled`] to check them.
    pub fn custom(
        objective: Arc<dyn Objective>,
        minimizer: Vec<f64>,
        min_value: f64,
        alpha: f64,
        lipschitz_m: f64,
        mu: Option<f64>,
    ) -> Result<Self> {
        require_positive("alpha", alpha)?;
        require_positive("lipschitz_m", lipschitz_m)?;
        if let Some(mu) = mu {
            require_positive("mu", mu)?;
        }
        if minimizer.len() != objective.dim() {
            return Err(Error::invalid(
                "minimizer",
                format!("has {} entries, objective dimension is {}", minimizer.len(), objective.dim()),
            ));
        }
        Ok(ObjectiveSpec {
            problem: Problem {
                objective,
                alpha,
                lipschitz_m,
                mu,
            },
            minimizer,
            min_value,
            builtin: None,
        })
    }

    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn builtin_kind(&self) -> Option<&BuiltinObjective> {
        self.builtin.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.problem.objective.dim()
    }

    pub fn eval(&self, z1: &[f64]) -> f64 {
        self.problem.value(z1)
    }

    pub fn grad(&self, z1: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        self.problem.objective.gradient(z1, &mut g);
        g
    }

    pub fn alpha(&self) -> f64 {
        self.problem.alpha
    }

    pub fn lipschitz_m(&self) -> f64 {
        self.problem.lipschitz_m
    }

    pub fn mu(&self) -> Option<f64> {
        self.problem.mu
    }

    /// Measurement-only.
    pub fn minimizer(&self) -> &[f64] {
        &self.minimizer
    }

    /// Measurement-only.
    pub fn min_value(&self) -> f64 {
        self.min_value
    }

    /// `L(z1) - L*`
    pub fn gap(&self, z1: &[f64]) -> f64 {
        self.eval(z1) - self.min_value
    }

    /// Samples the quadratic-growth and gradient-Lipschitz inequalities at
    /// `n_samples` points (and point pairs) in a box of half-width `radius`
    /// around the minimizer.
    pub fn verify_sampled(&self, n_samples: usize, radius: f64, seed: u64) -> SampledCheck {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.dim();
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            self.minimizer
                .iter()
                .map(|c| c + rng.random_range(-radius..=radius))
                .collect()
        };
        let mut report = SampledCheck::default();
        for _ in 0..n_samples {
            let z = draw(&mut rng);
            let d = dist(&z, &self.minimizer);
            let slack = self.gap(&z) - self.alpha() * d * d;
            report.worst_growth_slack = report.worst_growth_slack.min(slack);
            if slack < -1e-9 {
                report.growth_violations += 1;
            }

            let u = draw(&mut rng);
            let w = draw(&mut rng);
            let gu = self.grad(&u);
            let gw = self.grad(&w);
            let diff: Vec<f64> = gu.iter().zip(&gw).map(|(a, b)| a - b).collect();
            let excess = norm(&diff) - self.lipschitz_m() * dist(&u, &w);
            report.worst_lipschitz_excess = report.worst_lipschitz_excess.max(excess);
            if excess > 1e-9 {
                report.lipschitz_violations += 1;
            }
        }
        debug_assert_eq!(n, self.minimizer.len());
        report.samples = n_samples;
        report
    }
}

/// Result of [`ObjectiveSpec::verify_sampled`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampledCheck {
    pub samples: usize,
    pub growth_violations: usize,
    pub lipschitz_violations: usize,
    /// Smallest observed `L - L* - alpha |z - z*|^2`.
    pub worst_growth_slack: f64,
    /// Largest observed `|grad u - grad w| - M |u - w|`.
    pub worst_lipschitz_excess: f64,
}

impl Default for SampledCheck {
    fn default() -> Self {
        SampledCheck {
            samples: 0,
            growth_violations: 0,
            lipschitz_violations: 0,
            worst_growth_slack: f64::INFINITY,
            worst_lipschitz_excess: f64::NEG_INFINITY,
        }
    }
}

impl SampledCheck {
    pub fn passed(&self) -> bool {
        self.growth_violations == 0 && self.lipschitz_violations == 0
    }
}

/// `L(z) = a z^2` with `alpha = a`, `M = mu = 2a`.
pub fn make_scalar_quadratic(a: f64) -> Result<ObjectiveSpec> {
    ObjectiveSpec::builtin(BuiltinObjective::ScalarQuadratic { a })
}

/// Largest componentwise difference between the analytic gradient and a
/// central difference of the objective with step `h`.
pub fn check_gradient_fd(obj: &ObjectiveSpec, z1: &[f64], h: f64) -> Result<f64> {
    require_positive("h", h)?;
    let grad = obj.grad(z1);
    let mut probe = z1.to_vec();
    let mut worst = 0.0f64;
    for i in 0..z1.len() {
        probe[i] = z1[i] + h;
        let plus = obj.eval(&probe);
        probe[i] = z1[i] - h;
        let minus = obj.eval(&probe);
        probe[i] = z1[i];
        let fd = (plus - minus) / (2.0 * h);
        worst = worst.max((fd - grad[i]).abs());
    }
    Ok(worst)
}

/// Radius around the minimizer guaranteed to contain every `z1` whose
/// gradient norm is at most `grad_norm`: `|z1 - z1*| <= |grad L(z1)| / alpha`.
pub fn suboptimality_radius(alpha: f64, grad_norm: f64) -> f64 {
    grad_norm / alpha
}
