use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::algorithms::ClosedLoop;
use crate::baselines::HandSystem;
use crate::error::{require_positive, Error, Result};
use crate::hybrid::HybridSystem;
use crate::objective::GradientOracle;
use crate::uniting::UnitingSystem;

/// Zero-mean Gaussian measurement noise, piecewise linear in time.
///
/// Independent draws sit at `t = k * grid` for every component; values in
/// between are interpolated. Beyond the horizon the last draw is held.
#[derive(Debug, Clone)]
pub struct NoiseProcess {
    seed: u64,
    sigma: f64,
    grid: f64,
    dim: usize,
    /// `draws[k * dim + i]`: component `i` at grid point `k`.
    draws: Arc<Vec<f64>>,
}

impl NoiseProcess {
    pub fn new(seed: u64, sigma: f64, grid: f64, horizon: f64, dim: usize) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::invalid("sigma", format!("must be finite and nonnegative, got {sigma}")));
        }
        require_positive("grid", grid)?;
        require_positive("horizon", horizon)?;
        if dim == 0 {
            return Err(Error::invalid("dim", "must be at least 1"));
        }
        let points = (horizon / grid).ceil() as usize + 2;
        let draws = if sigma == 0.0 {
            vec![0.0; points * dim]
        } else {
            let normal = Normal::new(0.0, sigma).expect("sigma checked above");
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..points * dim).map(|_| normal.sample(&mut rng)).collect()
        };
        Ok(NoiseProcess {
            seed,
            sigma,
            grid,
            dim,
            draws: Arc::new(draws),
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn grid(&self) -> f64 {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn points(&self) -> usize {
        self.draws.len() / self.dim
    }

    /// Raw draw at grid point `k`.
    pub fn draw(&self, k: usize, component: usize) -> f64 {
        self.draws[k.min(self.points() - 1) * self.dim + component]
    }

    pub fn eval(&self, t: f64, component: usize) -> f64 {
        if self.sigma == 0.0 {
            return 0.0;
        }
        let s = (t / self.grid).max(0.0);
        let k = s.floor() as usize;
        if k + 1 >= self.points() {
            return self.draw(self.points() - 1, component);
        }
        let w = s - k as f64;
        let a = self.draw(k, component);
        if w == 0.0 {
            return a;
        }
        a + w * (self.draw(k + 1, component) - a)
    }
}

/// A gradient oracle with additive noise indexed by flow time.
#[derive(Clone)]
pub struct NoisyOracle {
    inner: Arc<dyn GradientOracle>,
    noise: NoiseProcess,
}

impl NoisyOracle {
    pub fn new(inner: Arc<dyn GradientOracle>, noise: NoiseProcess) -> Result<Self> {
        if inner.dim() != noise.dim() {
            return Err(Error::invalid(
                "noise",
                format!("noise dimension {} does not match gradient dimension {}", noise.dim(), inner.dim()),
            ));
        }
        Ok(NoisyOracle { inner, noise })
    }
}

impl GradientOracle for NoisyOracle {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn gradient(&self, t: f64, z1: &[f64], out: &mut [f64]) {
        self.inner.gradient(t, z1, out);
        if self.noise.sigma() == 0.0 {
            return;
        }
        for (i, g) in out.iter_mut().enumerate() {
            *g += self.noise.eval(t, i);
        }
    }
}

/// Systems whose every gradient measurement goes through a swappable oracle.
pub trait Perturbable: HybridSystem + Sized {
    fn oracle(&self) -> Arc<dyn GradientOracle>;
    fn with_oracle(&self, oracle: Arc<dyn GradientOracle>) -> Self;
}

impl Perturbable for ClosedLoop {
    fn oracle(&self) -> Arc<dyn GradientOracle> {
        ClosedLoop::oracle(self).clone()
    }
    fn with_oracle(&self, oracle: Arc<dyn GradientOracle>) -> Self {
        ClosedLoop::with_oracle(self, oracle)
    }
}

impl Perturbable for UnitingSystem {
    fn oracle(&self) -> Arc<dyn GradientOracle> {
        UnitingSystem::oracle(self).clone()
    }
    fn with_oracle(&self, oracle: Arc<dyn GradientOracle>) -> Self {
        UnitingSystem::with_oracle(self, oracle)
    }
}

impl Perturbable for HandSystem {
    fn oracle(&self) -> Arc<dyn GradientOracle> {
        HandSystem::oracle(self).clone()
    }
    fn with_oracle(&self, oracle: Arc<dyn GradientOracle>) -> Self {
        HandSystem::with_oracle(self, oracle)
    }
}

/// Adds `np` to every gradient the system measures, in flows and in set
/// predicates alike. Jump maps are untouched.
pub fn perturb_gradient<S: Perturbable>(system: &S, np: &NoiseProcess) -> Result<S> {
    let oracle = NoisyOracle::new(system.oracle(), np.clone())?;
    Ok(system.with_oracle(Arc::new(oracle)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sigma_is_silent() {
        let np = NoiseProcess::new(3, 0.0, 0.01, 10.0, 2).unwrap();
        for t in [0.0, 0.005, 3.3, 12.0] {
            assert_eq!(np.eval(t, 0), 0.0);
            assert_eq!(np.eval(t, 1), 0.0);
        }
    }

    #[test]
    fn grid_points_return_draws() {
        let np = NoiseProcess::new(9, 1.0, 0.01, 1.0, 1).unwrap();
        for k in [0usize, 1, 17, 99] {
            assert_eq!(np.eval(k as f64 * 0.01, 0), np.draw(k, 0), "k = {k}");
        }
        let mid = np.eval(0.015, 0);
        assert!((mid - 0.5 * (np.draw(1, 0) + np.draw(2, 0))).abs() < 1e-12);
    }

    #[test]
    fn deterministic_per_seed() {
        let a = NoiseProcess::new(5, 2.0, 0.01, 5.0, 1).unwrap();
        let b = NoiseProcess::new(5, 2.0, 0.01, 5.0, 1).unwrap();
        let c = NoiseProcess::new(6, 2.0, 0.01, 5.0, 1).unwrap();
        assert_eq!(a.eval(1.234, 0), b.eval(1.234, 0));
        assert_ne!(a.eval(1.234, 0), c.eval(1.234, 0));
    }

    #[test]
    fn draws_have_zero_mean() {
        let np = NoiseProcess::new(11, 1.0, 0.01, 10_000.0, 1).unwrap();
        let n = 1_000_000;
        let mean = (0..n).map(|k| np.draw(k, 0)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn negative_sigma_rejected() {
        assert!(NoiseProcess::new(0, -1.0, 0.01, 1.0, 1).is_err());
    }
}
