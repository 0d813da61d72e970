use super::{HybridState, HybridSystem, StateDerivative};
use crate::error::{require_positive, Error, Result};

/// Reusable buffers for classical RK4 on `(z1, z2, tau)`.
pub(crate) struct Rk4 {
    k: [StateDerivative; 4],
    stage: HybridState,
    mid: HybridState,
}

impl Rk4 {
    pub(crate) fn new(n: usize) -> Self {
        let blank = HybridState::new(vec![0.0; n], vec![0.0; n], super::Mode::Local, 0.0);
        Rk4 {
            k: std::array::from_fn(|_| StateDerivative::zeros(n)),
            stage: blank.clone(),
            mid: blank,
        }
    }

    /// Third-stage input `x + h/2 k2` of the last step: a cheap midpoint estimate.
    pub(crate) fn midpoint(&self) -> &HybridState {
        &self.mid
    }

    fn set_stage(&mut self, x: &HybridState, s: f64, which: usize) {
        let k = &self.k[which];
        for ((o, a), d) in self.stage.z1.iter_mut().zip(&x.z1).zip(&k.dz1) {
            *o = a + s * d;
        }
        for ((o, a), d) in self.stage.z2.iter_mut().zip(&x.z2).zip(&k.dz2) {
            *o = a + s * d;
        }
        self.stage.tau = x.tau + s * k.dtau;
        self.stage.q = x.q;
    }

    fn eval<S: HybridSystem + ?Sized>(&mut self, sys: &S, t: f64, which: usize, from_stage: bool, x: &HybridState) -> Result<()> {
        let src = if from_stage { &self.stage } else { x };
        sys.flow(t, src, &mut self.k[which]);
        if self.k[which].is_finite() {
            Ok(())
        } else {
            Err(Error::NumericBlowup {
                t,
                state: Box::new(src.clone()),
            })
        }
    }

    /// One step of size `h` from `x` at flow time `t`.
    pub(crate) fn step<S: HybridSystem + ?Sized>(
        &mut self,
        sys: &S,
        t: f64,
        x: &HybridState,
        h: f64,
    ) -> Result<HybridState> {
        let half = 0.5 * h;
        self.eval(sys, t, 0, false, x)?;
        self.set_stage(x, half, 0);
        self.eval(sys, t + half, 1, true, x)?;
        self.set_stage(x, half, 1);
        self.mid.clone_from(&self.stage);
        self.eval(sys, t + half, 2, true, x)?;
        self.set_stage(x, h, 2);
        self.eval(sys, t + h, 3, true, x)?;

        let w = h / 6.0;
        let [k1, k2, k3, k4] = &self.k;
        let combine = |a: f64, i: usize, pick: fn(&StateDerivative) -> &[f64]| {
            a + w * (pick(k1)[i] + 2.0 * pick(k2)[i] + 2.0 * pick(k3)[i] + pick(k4)[i])
        };
        let z1 = x
            .z1
            .iter()
            .enumerate()
            .map(|(i, &a)| combine(a, i, |k| &k.dz1))
            .collect();
        let z2 = x
            .z2
            .iter()
            .enumerate()
            .map(|(i, &a)| combine(a, i, |k| &k.dz2))
            .collect();
        let tau = x.tau + w * (k1.dtau + 2.0 * k2.dtau + 2.0 * k3.dtau + k4.dtau);
        Ok(HybridState::new(z1, z2, x.q, tau))
    }
}

/// Classical fourth-order Runge-Kutta step of the flow map; `q` is held fixed.
pub fn rk4_step<S: HybridSystem + ?Sized>(sys: &S, t: f64, x: &HybridState, h: f64) -> Result<HybridState> {
    require_positive("h", h)?;
    Rk4::new(x.dim()).step(sys, t, x, h)
}

/// Bisects the step `[t, t + h]` started from `x_start` for the first time the
/// flow enters the jump set, re-integrating partial steps from `x_start`.
///
/// Returns the offset into the step and the state there; the returned state is
/// always inside the jump set and the offset is within `tol` of the entry time.
/// A state already in the jump set gives offset zero.
pub fn locate_jump<S: HybridSystem + ?Sized>(
    sys: &S,
    t: f64,
    x_start: &HybridState,
    h: f64,
    tol: f64,
) -> Result<(f64, HybridState)> {
    require_positive("h", h)?;
    require_positive("tol", tol)?;
    if tol >= h {
        return Err(Error::invalid("tol", format!("must be smaller than the step {h}, got {tol}")));
    }
    let mut rk = Rk4::new(x_start.dim());
    locate_with(&mut rk, sys, t, x_start, h, None, tol)
}

/// `hi_state`, when known, is the state at offset `h` (already in the jump set).
pub(crate) fn locate_with<S: HybridSystem + ?Sized>(
    rk: &mut Rk4,
    sys: &S,
    t: f64,
    x_start: &HybridState,
    h: f64,
    hi_state: Option<HybridState>,
    tol: f64,
) -> Result<(f64, HybridState)> {
    if sys.in_jump_set(t, x_start) {
        return Ok((0.0, x_start.clone()));
    }
    let mut lo = 0.0;
    let mut hi = h;
    let mut hi_state = match hi_state {
        Some(s) => s,
        None => rk.step(sys, t, x_start, h)?,
    };
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let x_mid = rk.step(sys, t, x_start, mid)?;
        if sys.in_jump_set(t + mid, &x_mid) {
            hi = mid;
            hi_state = x_mid;
        } else {
            lo = mid;
        }
    }
    Ok((hi, hi_state))
}
