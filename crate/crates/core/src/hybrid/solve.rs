use serde::{Deserialize, Serialize};

use super::arc::{JumpRecord, Sample, SolutionArc, Termination};
use super::rk4::{locate_with, Rk4};
use super::{HybridState, HybridSystem, HybridTime};
use crate::error::{require_positive, Error, Result};
use crate::vecops::dist;

/// Early stop once `|z1 - center| <= radius_fraction * |z1(0,0) - center|` has
/// held continuously for `hold` units of flow time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettleStop {
    pub center: Vec<f64>,
    pub radius_fraction: f64,
    pub hold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorConfig {
    pub step: f64,
    pub event_tol: f64,
    pub t_max: f64,
    pub j_max: usize,
    /// Store every `record_every`-th flow step; jump and final samples are always kept.
    pub record_every: usize,
    pub settle_stop: Option<SettleStop>,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            step: 1e-4,
            event_tol: 1e-9,
            t_max: 10.0,
            j_max: 10,
            record_every: 10,
            settle_stop: None,
        }
    }
}

impl IntegratorConfig {
    pub fn with_t_max(t_max: f64) -> Self {
        IntegratorConfig {
            t_max,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        require_positive("step", self.step)?;
        require_positive("event_tol", self.event_tol)?;
        require_positive("t_max", self.t_max)?;
        if self.event_tol >= self.step {
            return Err(Error::invalid(
                "event_tol",
                format!("must be smaller than the step {}, got {}", self.step, self.event_tol),
            ));
        }
        if self.j_max == 0 {
            return Err(Error::invalid("j_max", "must be at least 1"));
        }
        if self.record_every == 0 {
            return Err(Error::invalid("record_every", "must be at least 1"));
        }
        if let Some(s) = &self.settle_stop {
            if !(s.radius_fraction > 0.0 && s.radius_fraction < 1.0) {
                return Err(Error::invalid("settle_stop.radius_fraction", "must lie in (0, 1)"));
            }
            if !(s.hold >= 0.0 && s.hold.is_finite()) {
                return Err(Error::invalid("settle_stop.hold", "must be finite and nonnegative"));
            }
        }
        Ok(())
    }
}

/// Per-sample observer. Monitors see every accepted sample, recorded or not;
/// the value returned for recorded samples becomes a column of the arc.
pub trait Monitor: Send {
    fn name(&self) -> String;
    fn observe(&mut self, time: HybridTime, x: &HybridState) -> f64;
}

struct Recorder<'m> {
    arc: SolutionArc,
    monitors: &'m mut [Box<dyn Monitor>],
    /// Monitor values at the most recently accepted state.
    latest: Vec<f64>,
}

impl Recorder<'_> {
    /// Feeds monitors and, when `keep`, stores the sample.
    fn accept(&mut self, time: HybridTime, x: &HybridState, keep: bool) {
        let last = self.arc.samples.last().map(|s| s.time);
        let keep = keep && last.is_none_or(|l| l.precedes(&time));
        for (k, m) in self.monitors.iter_mut().enumerate() {
            self.latest[k] = m.observe(time, x);
            if keep {
                self.arc.monitor_values[k].push(self.latest[k]);
            }
        }
        if keep {
            self.arc.samples.push(Sample {
                time,
                state: x.clone(),
            });
        }
    }

    /// Makes sure the most recently accepted state is also the last stored one.
    fn ensure_stored(&mut self, time: HybridTime, x: &HybridState) {
        let stored = self.arc.samples.last().is_some_and(|s| s.time == time);
        if !stored {
            self.arc.samples.push(Sample {
                time,
                state: x.clone(),
            });
            for (col, v) in self.arc.monitor_values.iter_mut().zip(&self.latest) {
                col.push(*v);
            }
        }
    }
}

/// Solves the hybrid system from `x0` under jump priority.
///
/// At each accepted state the jump set is tested first; otherwise one RK4 flow
/// step is taken. A step that ends inside the jump set, or whose midpoint
/// probe sees a nonpositive [`HybridSystem::jump_margin`], is bisected back to
/// the entry time.
pub fn solve<S: HybridSystem + ?Sized>(
    sys: &S,
    x0: &HybridState,
    cfg: &IntegratorConfig,
    monitors: &mut [Box<dyn Monitor>],
) -> Result<SolutionArc> {
    cfg.validate()?;
    if x0.dim() != sys.dim() || x0.z2.len() != sys.dim() {
        return Err(Error::invalid(
            "x0",
            format!("dimension {} does not match system dimension {}", x0.dim(), sys.dim()),
        ));
    }
    if !x0.is_finite() {
        return Err(Error::invalid("x0", "state must be finite"));
    }
    if !sys.in_flow_set(0.0, x0) && !sys.in_jump_set(0.0, x0) {
        return Err(Error::NoSolution("initial state lies in neither the flow set nor the jump set".into()));
    }

    let mut rec = Recorder {
        arc: SolutionArc {
            samples: Vec::new(),
            jumps: Vec::new(),
            monitor_names: monitors.iter().map(|m| m.name()).collect(),
            monitor_values: vec![Vec::new(); monitors.len()],
            termination: Termination::TMaxReached,
        },
        latest: vec![f64::NAN; monitors.len()],
        monitors,
    };

    let h = cfg.step;
    let mut rk = Rk4::new(x0.dim());
    let mut x = x0.clone();
    let mut t = 0.0_f64;
    let mut j = 0_usize;
    let mut steps = 0_usize;
    rec.accept(HybridTime::new(t, j), &x, true);

    let settle = cfg.settle_stop.as_ref().map(|s| {
        let r0 = dist(&x0.z1, &s.center);
        (s, s.radius_fraction * r0)
    });
    let mut inside_since: Option<f64> = None;

    let termination = loop {
        if sys.in_jump_set(t, &x) {
            if j >= cfg.j_max {
                break Termination::JMaxReached;
            }
            rec.ensure_stored(HybridTime::new(t, j), &x);
            let after = sys.jump(t, &x);
            rec.arc.jumps.push(JumpRecord {
                t,
                j_before: j,
                state_before: x.clone(),
                state_after: after.clone(),
            });
            x = after;
            j += 1;
            rec.accept(HybridTime::new(t, j), &x, true);
            if !sys.in_flow_set(t, &x) && !sys.in_jump_set(t, &x) {
                break Termination::LeftCAndD;
            }
            continue;
        }

        if let Some((s, radius)) = settle {
            if dist(&x.z1, &s.center) <= radius {
                let since = *inside_since.get_or_insert(t);
                if t - since >= s.hold {
                    break Termination::Settled;
                }
            } else {
                inside_since = None;
            }
        }

        let remaining = cfg.t_max - t;
        if remaining <= 1e-12 * cfg.t_max.max(1.0) {
            break Termination::TMaxReached;
        }
        let dt = h.min(remaining);

        let next = rk.step(sys, t, &x, dt)?;
        let (dt, next, event) = if sys.in_jump_set(t + dt, &next) {
            let (off, at) = locate_with(&mut rk, sys, t, &x, dt, Some(next), cfg.event_tol.min(0.5 * dt))?;
            (off, at, true)
        } else if sys
            .jump_margin(t + 0.5 * dt, rk.midpoint())
            .is_some_and(|m| m <= 0.0)
        {
            // The step may have passed straight through a thin jump set.
            let half = rk.step(sys, t, &x, 0.5 * dt)?;
            if sys.in_jump_set(t + 0.5 * dt, &half) {
                let (off, at) = locate_with(&mut rk, sys, t, &x, 0.5 * dt, Some(half), cfg.event_tol.min(0.25 * dt))?;
                (off, at, true)
            } else {
                (dt, next, false)
            }
        } else {
            (dt, next, false)
        };

        t += dt;
        x = next;
        steps += 1;
        let keep = event || steps % cfg.record_every == 0;
        rec.accept(HybridTime::new(t, j), &x, keep);

        if !sys.in_flow_set(t, &x) && !sys.in_jump_set(t, &x) {
            break Termination::LeftCAndD;
        }
    };

    rec.ensure_stored(HybridTime::new(t, j), &x);
    rec.arc.termination = termination;
    Ok(rec.arc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybrid::{FnSystem, Mode, StateDerivative};

    fn damped() -> impl HybridSystem {
        FnSystem {
            dim: 1,
            flow: |_t: f64, x: &HybridState, dx: &mut StateDerivative| {
                dx.dz1[0] = x.z2[0];
                dx.dz2[0] = -x.z2[0] - 2.0 * x.z1[0];
                dx.dtau = 1.0;
            },
            flow_set: |_x: &HybridState| true,
            jump_set: |_x: &HybridState| false,
            jump_map: |x: &HybridState| x.clone(),
        }
    }

    /// Bouncing clock: `tau` runs to 1 and is reset to 0.
    fn clock() -> impl HybridSystem {
        FnSystem {
            dim: 1,
            flow: |_t: f64, _x: &HybridState, dx: &mut StateDerivative| {
                dx.dz1[0] = 0.0;
                dx.dz2[0] = 0.0;
                dx.dtau = 1.0;
            },
            flow_set: |x: &HybridState| x.tau <= 1.0,
            jump_set: |x: &HybridState| x.tau >= 1.0,
            jump_map: |x: &HybridState| HybridState { tau: 0.0, ..x.clone() },
        }
    }

    struct Counter(usize);
    impl Monitor for Counter {
        fn name(&self) -> String {
            "count".into()
        }
        fn observe(&mut self, _time: HybridTime, _x: &HybridState) -> f64 {
            self.0 += 1;
            self.0 as f64
        }
    }

    #[test]
    fn pure_flow_reaches_t_max_without_jumps() {
        let cfg = IntegratorConfig::with_t_max(1.0);
        let arc = solve(&damped(), &HybridState::scalar(1.0, 0.0, Mode::Global, 0.0), &cfg, &mut []).unwrap();
        assert_eq!(arc.termination, Termination::TMaxReached);
        assert_eq!(arc.jump_count(), 0);
        assert!((arc.final_time().t - 1.0).abs() < 1e-9);
        assert!((arc.final_state().tau - 1.0).abs() < 1e-9);
    }

    #[test]
    fn clock_jumps_once_per_unit_time() {
        let cfg = IntegratorConfig {
            t_max: 3.5,
            step: 1e-3,
            ..Default::default()
        };
        let arc = solve(&clock(), &HybridState::scalar(0.0, 0.0, Mode::Global, 0.0), &cfg, &mut []).unwrap();
        assert_eq!(arc.jump_count(), 3);
        for (k, r) in arc.jumps.iter().enumerate() {
            assert!((r.t - (k + 1) as f64).abs() < 1e-6, "jump {k} at {}", r.t);
            assert_eq!(r.j_before, k);
            assert_eq!(r.state_after.tau, 0.0);
        }
    }

    #[test]
    fn j_max_stops_the_clock() {
        let cfg = IntegratorConfig {
            t_max: 100.0,
            step: 1e-3,
            j_max: 2,
            ..Default::default()
        };
        let arc = solve(&clock(), &HybridState::scalar(0.0, 0.0, Mode::Global, 0.0), &cfg, &mut []).unwrap();
        assert_eq!(arc.termination, Termination::JMaxReached);
        assert_eq!(arc.jump_count(), 2);
    }

    #[test]
    fn hybrid_time_is_strictly_increasing() {
        let cfg = IntegratorConfig {
            t_max: 3.0,
            step: 1e-3,
            record_every: 7,
            ..Default::default()
        };
        let arc = solve(&clock(), &HybridState::scalar(0.0, 0.0, Mode::Global, 0.3), &cfg, &mut []).unwrap();
        for w in arc.samples.windows(2) {
            assert!(w[0].time.precedes(&w[1].time), "{:?} then {:?}", w[0].time, w[1].time);
        }
    }

    #[test]
    fn start_outside_c_and_d_is_rejected() {
        let x0 = HybridState::scalar(0.0, 0.0, Mode::Global, 2.0);
        let sys = FnSystem {
            dim: 1,
            flow: |_t: f64, _x: &HybridState, _dx: &mut StateDerivative| {},
            flow_set: |x: &HybridState| x.tau <= 1.0,
            jump_set: |x: &HybridState| x.tau < 0.0,
            jump_map: |x: &HybridState| x.clone(),
        };
        let err = solve(&sys, &x0, &IntegratorConfig::default(), &mut []).unwrap_err();
        assert!(matches!(err, Error::NoSolution(_)));
    }

    #[test]
    fn leaving_the_flow_set_terminates() {
        let sys = FnSystem {
            dim: 1,
            flow: |_t: f64, _x: &HybridState, dx: &mut StateDerivative| {
                dx.dz1[0] = 1.0;
                dx.dz2[0] = 0.0;
                dx.dtau = 0.0;
            },
            flow_set: |x: &HybridState| x.z1[0] <= 0.5,
            jump_set: |_x: &HybridState| false,
            jump_map: |x: &HybridState| x.clone(),
        };
        let arc = solve(&sys, &HybridState::scalar(0.0, 0.0, Mode::Local, 0.0), &IntegratorConfig::with_t_max(2.0), &mut []).unwrap();
        assert_eq!(arc.termination, Termination::LeftCAndD);
        assert!(arc.final_time().t > 0.5 && arc.final_time().t < 0.5 + 2e-4);
    }

    #[test]
    fn monitors_see_every_step_but_store_decimated() {
        let cfg = IntegratorConfig {
            t_max: 0.1,
            step: 1e-3,
            record_every: 10,
            ..Default::default()
        };
        let mut mons: Vec<Box<dyn Monitor>> = vec![Box::new(Counter(0))];
        let arc = solve(&damped(), &HybridState::scalar(1.0, 0.0, Mode::Global, 0.0), &cfg, &mut mons).unwrap();
        let col = arc.monitor("count").unwrap();
        assert_eq!(col.len(), arc.samples.len());
        assert_eq!(col[0], 1.0);
        assert_eq!(*col.last().unwrap(), 101.0);
        assert_eq!(arc.samples.len(), 11);
    }

    #[test]
    fn settle_stop_fires_after_hold() {
        let cfg = IntegratorConfig {
            t_max: 100.0,
            step: 1e-3,
            settle_stop: Some(SettleStop {
                center: vec![0.0],
                radius_fraction: 0.01,
                hold: 1.0,
            }),
            ..Default::default()
        };
        let arc = solve(&damped(), &HybridState::scalar(1.0, 0.0, Mode::Global, 0.0), &cfg, &mut []).unwrap();
        assert_eq!(arc.termination, Termination::Settled);
        assert!(arc.final_time().t < 20.0);
        assert!(arc.final_state().z1[0].abs() <= 0.01);
    }

    #[test]
    fn thin_jump_set_is_not_skipped() {
        // D is a band of width 1e-6 in z1 around a step midpoint, crossed at unit
        // speed with h = 1e-3: both step ends miss it.
        struct Band;
        impl HybridSystem for Band {
            fn dim(&self) -> usize {
                1
            }
            fn flow(&self, _t: f64, _x: &HybridState, dx: &mut StateDerivative) {
                dx.dz1[0] = 1.0;
                dx.dz2[0] = 0.0;
                dx.dtau = 0.0;
            }
            fn in_flow_set(&self, _t: f64, x: &HybridState) -> bool {
                x.q == Mode::Global
            }
            fn in_jump_set(&self, t: f64, x: &HybridState) -> bool {
                self.jump_margin(t, x).unwrap() <= 0.0
            }
            fn jump(&self, _t: f64, x: &HybridState) -> HybridState {
                HybridState { q: Mode::Local, ..x.clone() }
            }
            fn jump_margin(&self, _t: f64, x: &HybridState) -> Option<f64> {
                if x.q == Mode::Local {
                    return Some(1.0);
                }
                Some((x.z1[0] - 0.5005).abs() - 5e-7)
            }
        }
        let cfg = IntegratorConfig {
            t_max: 1.0,
            step: 1e-3,
            ..Default::default()
        };
        let arc = solve(&Band, &HybridState::scalar(0.0, 0.0, Mode::Global, 0.0), &cfg, &mut []).unwrap();
        assert_eq!(arc.jump_count(), 1);
        assert!((arc.jumps[0].t - (0.5005 - 5e-7)).abs() < 1e-8);
    }

    #[test]
    fn config_validation() {
        let bad = IntegratorConfig {
            event_tol: 1e-3,
            step: 1e-3,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(IntegratorConfig { step: 0.0, ..Default::default() }.validate().is_err());
        assert!(IntegratorConfig::default().validate().is_ok());
    }
}
