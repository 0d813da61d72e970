//! Turning run configs into systems, solving them and summarizing the arcs.

use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use uniting_core::algorithms::{
    as_closed_loop, ClosedLoop, FlowLaw, HeavyBallParams, NesterovNscParams, NesterovScParams, RateParams,
    TripleMomentumParams,
};
use uniting_core::analysis::{
    envelope_nesterov_monitor, fit_log_slope, gap_monitor, nesterov_envelope, nesterov_envelope_constant, perturb_gradient, settling_time,
    settling_time_by_gap, uniting_envelope, v0_monitor, v1_monitor, valt_monitor, NoiseProcess, RateEnvelope,
};
use uniting_core::baselines::{
    build_hand1, build_hand2, derive_hand1_schedule, hand2_rate_bound, Hand1Params, Hand1Schedule, Hand2Params,
    HandSystem,
};
use uniting_core::hybrid::{
    solve, HybridState, IntegratorConfig, Mode, Monitor, SolutionArc, Termination,
};
use uniting_core::objective::ObjectiveSpec;
use uniting_core::uniting::{derive_params, DesignConstants, UnitingParams, UnitingSystem, UnitingVariant};

use crate::config::{AlgorithmConfig, ExperimentConfig, IntegratorOverrides, RunConfig, VariantKind};

/// Command-line overrides that apply to every run.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub step: Option<f64>,
    pub full_trace: bool,
}

pub enum System {
    Closed(ClosedLoop),
    Uniting(UnitingSystem),
    Hand(HandSystem),
}

impl System {
    fn solve(&self, x0: &HybridState, cfg: &IntegratorConfig, monitors: &mut [Box<dyn Monitor>]) -> Result<SolutionArc> {
        Ok(match self {
            System::Closed(s) => solve(s, x0, cfg, monitors)?,
            System::Uniting(s) => solve(s, x0, cfg, monitors)?,
            System::Hand(s) => solve(s, x0, cfg, monitors)?,
        })
    }

    fn perturbed(&self, np: &NoiseProcess) -> Result<System> {
        Ok(match self {
            System::Closed(s) => System::Closed(perturb_gradient(s, np)?),
            System::Uniting(s) => System::Uniting(perturb_gradient(s, np)?),
            System::Hand(s) => System::Hand(perturb_gradient(s, np)?),
        })
    }
}

/// Everything needed to solve one configured run.
pub struct Prepared {
    pub name: String,
    pub algorithm: &'static str,
    pub system: System,
    pub x0: HybridState,
    pub integrator: IntegratorConfig,
    pub derived: Derived,
}

/// Constants computed while building, reported by `validate` and used by the envelope checks.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Derived {
    pub uniting: Option<UnitingParams>,
    pub hand1_schedule: Option<Hand1Schedule>,
    /// Nesterov envelope constant `c`.
    pub nesterov_c: Option<f64>,
    /// Heavy-ball rate parameters for the (local) heavy ball.
    pub rate: Option<RateParams>,
    /// Strongly convex Nesterov rate `a`.
    pub sc_a: Option<f64>,
    #[serde(skip)]
    variant: Option<UnitingVariant>,
    #[serde(skip)]
    hand2: Option<Hand2Params>,
    #[serde(skip)]
    zeta: Option<f64>,
}

fn global_field(field: &str, v: Option<f64>, variant: VariantKind) -> Result<f64> {
    match v {
        Some(v) => Ok(v),
        None => bail!("global.{field}: required for variant {}", serde_variant(variant)),
    }
}

fn serde_variant(v: VariantKind) -> &'static str {
    match v {
        VariantKind::NesterovNsc => "nesterov_nsc",
        VariantKind::NesterovSc => "nesterov_sc",
        VariantKind::HbfHbf => "hbf_hbf",
    }
}

pub fn prepare(cfg: &ExperimentConfig, run: &RunConfig, obj: &ObjectiveSpec, opts: &RunOptions) -> Result<Prepared> {
    let at = || format!("runs `{}`", run.name);
    let problem = obj.problem();
    let n = obj.dim();
    let z2 = run.x0.z2.clone().unwrap_or_else(|| vec![0.0; n]);
    let q = Mode::from_index(run.x0.q).context("x0.q must be 0 or 1")?;
    let x0 = HybridState::new(run.x0.z1.clone(), z2, q, run.tau0());
    let m_rate = cfg.measurements.rate_m;

    let mut derived = Derived::default();
    let system = match &run.algorithm {
        AlgorithmConfig::Uniting {
            variant,
            local,
            global,
            eps0,
            eps10,
            c0,
            c10,
            hat_c0,
        } => {
            let v = match variant {
                VariantKind::NesterovNsc => {
                    let zeta = global_field("zeta", global.zeta, *variant)?;
                    UnitingVariant::NesterovNsc {
                        local: *local,
                        global: NesterovNscParams::new(zeta, problem.lipschitz_m())?,
                    }
                }
                VariantKind::NesterovSc => {
                    let zeta = global_field("zeta", global.zeta, *variant)?;
                    UnitingVariant::NesterovSc {
                        local: *local,
                        global: NesterovScParams::for_problem(zeta, problem)?,
                    }
                }
                VariantKind::HbfHbf => UnitingVariant::HbfHbf {
                    local: *local,
                    global: HeavyBallParams::new(
                        global_field("lambda", global.lambda, *variant)?,
                        global_field("gamma", global.gamma, *variant)?,
                    )?,
                },
            };
            let raw = DesignConstants {
                eps0: *eps0,
                eps10: *eps10,
                c0: *c0,
                c10: *c10,
                hat_c0: *hat_c0,
            };
            let params = derive_params(&raw, &v, problem).with_context(at)?;
            derived.uniting = Some(params);
            derived.rate = Some(RateParams::new(m_rate, problem.alpha(), local)?);
            match v {
                UnitingVariant::NesterovNsc { global, .. } => {
                    derived.nesterov_c = Some(nesterov_envelope_constant(
                        global.zeta,
                        global.lipschitz_m,
                    ));
                    derived.zeta = Some(global.zeta);
                }
                UnitingVariant::NesterovSc { global, .. } => derived.sc_a = Some(global.rate_a()),
                UnitingVariant::HbfHbf { .. } => {}
            }
            derived.variant = Some(v);
            if x0.tau != 0.0 {
                eprintln!(
                    "warning: run `{}` starts with tau = {}; the uniting rate results assume tau(0,0) = 0",
                    run.name, x0.tau
                );
            }
            System::Uniting(UnitingSystem::new(v, params, Arc::new(problem.clone()))?)
        }
        AlgorithmConfig::HeavyBall { lambda, gamma } => {
            let p = HeavyBallParams::new(*lambda, *gamma).with_context(at)?;
            derived.rate = Some(RateParams::new(m_rate, problem.alpha(), &p)?);
            System::Closed(as_closed_loop(FlowLaw::HeavyBall(p), problem)?)
        }
        AlgorithmConfig::NesterovNsc { zeta } => {
            let p = NesterovNscParams::new(*zeta, problem.lipschitz_m()).with_context(at)?;
            derived.nesterov_c = Some(nesterov_envelope_constant(*zeta, p.lipschitz_m));
            derived.zeta = Some(*zeta);
            System::Closed(as_closed_loop(FlowLaw::NesterovNsc(p), problem)?)
        }
        AlgorithmConfig::NesterovSc { zeta } => {
            let p = NesterovScParams::for_problem(*zeta, problem).with_context(at)?;
            derived.sc_a = Some(p.rate_a());
            System::Closed(as_closed_loop(FlowLaw::NesterovSc(p), problem)?)
        }
        AlgorithmConfig::GradientDescent { gamma } => {
            System::Closed(as_closed_loop(FlowLaw::GradientDescent { gamma: *gamma }, problem).with_context(at)?)
        }
        AlgorithmConfig::TripleMomentum {} => {
            let kappa = problem
                .condition_number()
                .context("triple momentum needs a strongly convex objective")?;
            let p = TripleMomentumParams::ideal(kappa, problem.lipschitz_m())?;
            System::Closed(as_closed_loop(FlowLaw::TripleMomentum(p), problem)?)
        }
        AlgorithmConfig::Hand1 {
            c1,
            t_min,
            t_med,
            t_max,
            r,
            delta_med,
        } => {
            let p = match (t_med, t_max, r, delta_med) {
                (Some(t_med), Some(t_max), None, None) => Hand1Params::new(*c1, *t_min, *t_med, *t_max)?,
                (None, None, Some(r), Some(delta_med)) => {
                    let s = derive_hand1_schedule(*r, *c1, *t_min, *delta_med, obj.gap(&x0.z1)).with_context(at)?;
                    derived.hand1_schedule = Some(s);
                    Hand1Params::from_schedule(*c1, *t_min, &s)?
                }
                _ => bail!("{}: hand1 needs either t_med and t_max, or r and delta_med", at()),
            };
            System::Hand(build_hand1(&p, problem).with_context(at)?)
        }
        AlgorithmConfig::Hand2 { c, t_min, t_max } => {
            let p = Hand2Params::new(*c, *t_min, *t_max).with_context(at)?;
            derived.hand2 = Some(p);
            System::Hand(build_hand2(&p, problem).with_context(at)?)
        }
    };

    let mut overrides: IntegratorOverrides = cfg.integrator.layered(&run.integrator);
    if let Some(h) = opts.step {
        overrides.step = Some(h);
    }
    if opts.full_trace {
        overrides.record_every = Some(1);
    }
    let integrator = overrides.resolve(obj.minimizer(), cfg.measurements.settle_fraction);
    integrator.validate().with_context(at)?;

    Ok(Prepared {
        name: run.name.clone(),
        algorithm: run.algorithm.name(),
        system,
        x0,
        integrator,
        derived,
    })
}

impl Prepared {
    fn monitors(&self, obj: &ObjectiveSpec) -> Vec<Box<dyn Monitor>> {
        let mut out = vec![gap_monitor(obj)];
        if let Some(v) = &self.derived.variant {
            out.push(v0_monitor(obj, v.local().gamma));
        }
        if let System::Closed(c) = &self.system {
            if let FlowLaw::HeavyBall(p) = c.law() {
                out.push(v0_monitor(obj, p.gamma));
                if let Some(r) = self.derived.rate {
                    out.push(valt_monitor(obj, p.gamma, r.psi, r.nu));
                }
            }
        }
        if let Some(zeta) = self.derived.zeta {
            out.push(v1_monitor(obj, zeta));
            if matches!(self.system, System::Closed(_)) {
                out.push(envelope_nesterov_monitor(obj, zeta, &self.x0.z1, &self.x0.z2));
            }
        }
        out
    }

    pub fn solve(&self, obj: &ObjectiveSpec) -> Result<SolutionArc> {
        let mut monitors = self.monitors(obj);
        self.system
            .solve(&self.x0, &self.integrator, &mut monitors)
            .with_context(|| format!("solving run `{}`", self.name))
    }

    /// Solves with gradient noise over the run's horizon.
    pub fn solve_noisy(&self, obj: &ObjectiveSpec, seed: u64, sigma: f64, grid: f64) -> Result<SolutionArc> {
        let np = NoiseProcess::new(seed, sigma, grid, self.integrator.t_max, obj.dim())?;
        let sys = self.system.perturbed(&np)?;
        let mut monitors = self.monitors(obj);
        sys.solve(&self.x0, &self.integrator, &mut monitors)
            .with_context(|| format!("solving run `{}` with sigma = {sigma}, seed = {seed}", self.name))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeCheck {
    pub envelope: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub name: String,
    pub algorithm: &'static str,
    pub settling_time: Option<f64>,
    pub jump_count: usize,
    pub jump_times: Vec<f64>,
    pub final_time: f64,
    pub final_state: HybridState,
    pub termination: Termination,
    pub envelope_checks: Vec<EnvelopeCheck>,
    pub trace: Option<String>,
}

pub fn settle(arc: &SolutionArc, obj: &ObjectiveSpec, cfg: &ExperimentConfig) -> Result<Option<f64>> {
    let f = cfg.measurements.settle_fraction;
    let s = if cfg.measurements.settle_on_gap {
        settling_time_by_gap(arc, obj, f)?
    } else {
        settling_time(arc, obj, f)?
    };
    Ok(s.time())
}

pub fn summarize(p: &Prepared, arc: &SolutionArc, obj: &ObjectiveSpec, cfg: &ExperimentConfig) -> Result<RunSummary> {
    Ok(RunSummary {
        name: p.name.clone(),
        algorithm: p.algorithm,
        settling_time: settle(arc, obj, cfg)?,
        jump_count: arc.jump_count(),
        jump_times: arc.jump_times(),
        final_time: arc.final_time().t,
        final_state: arc.final_state().clone(),
        termination: arc.termination,
        envelope_checks: envelope_checks(p, arc, obj, cfg)?,
        trace: None,
    })
}

fn wanted(cfg: &ExperimentConfig, name: &str) -> bool {
    cfg.measurements.envelopes.is_empty() || cfg.measurements.envelopes.iter().any(|e| e == name)
}

/// Ratio check `measured <= bound` over the given samples.
fn pointwise(envelope: &'static str, pairs: impl Iterator<Item = (f64, f64)>) -> EnvelopeCheck {
    let mut worst = f64::NEG_INFINITY;
    let mut count = 0usize;
    for (measured, bound) in pairs {
        count += 1;
        let ratio = if bound > 0.0 { measured / bound } else if measured > 0.0 { f64::INFINITY } else { 0.0 };
        worst = worst.max(ratio);
    }
    EnvelopeCheck {
        envelope,
        passed: count == 0 || worst <= 1.0,
        detail: if count == 0 {
            "no samples where the bound applies".into()
        } else {
            format!("worst measured/bound ratio {worst:.4e} over {count} samples")
        },
    }
}

pub fn envelope_checks(
    p: &Prepared,
    arc: &SolutionArc,
    obj: &ObjectiveSpec,
    cfg: &ExperimentConfig,
) -> Result<Vec<EnvelopeCheck>> {
    let mut out = Vec::new();
    let d = &p.derived;
    let star = obj.minimizer();

    if let (Some(v), true) = (&d.variant, wanted(cfg, "uniting_piecewise")) {
        let env = RateEnvelope::for_uniting(v, obj.alpha(), cfg.measurements.rate_m)?;
        let rep = uniting_envelope(arc, obj, &env)?;
        let segments: Vec<String> = rep
            .segments
            .iter()
            .map(|s| format!("j={} q={} {}: {}", s.j, s.mode, s.envelope, if s.passed { "ok" } else { "violated" }))
            .collect();
        out.push(EnvelopeCheck {
            envelope: "uniting_piecewise",
            passed: rep.passed(),
            detail: format!("{} jump(s); {}", rep.jumps, segments.join("; ")),
        });
    }

    if let (System::Closed(c), true) = (&p.system, wanted(cfg, "nesterov_nsc_9_over_t2")) {
        if let FlowLaw::NesterovNsc(np) = c.law() {
            let gain = np.zeta * np.zeta / np.lipschitz_m;
            // The envelope is stated from tau(0) = 0.
            let tau0 = p.x0.tau;
            out.push(pointwise(
                "nesterov_nsc_9_over_t2",
                arc.samples.iter().filter(|s| tau0 == 0.0 && s.state.tau >= 1.0).map(|s| {
                    (
                        gain * obj.gap(&s.state.z1),
                        nesterov_envelope(s.state.tau, np.zeta, np.lipschitz_m, &p.x0.z1, &p.x0.z2, star),
                    )
                }),
            ));
        }
    }

    if let (System::Closed(c), Some(rate), true) = (&p.system, d.rate, wanted(cfg, "heavy_ball_exp")) {
        if let FlowLaw::HeavyBall(_) = c.law() {
            let start = 0.5 * arc.final_time().t;
            let slope = fit_log_slope(arc.samples.iter().filter(|s| s.time.t >= start).map(|s| (s.time.t, obj.gap(&s.state.z1))));
            let required = -0.9 * rate.decay();
            out.push(EnvelopeCheck {
                envelope: "heavy_ball_exp",
                passed: slope.is_none_or(|s| s <= required),
                detail: match slope {
                    Some(s) => format!("tail log-slope {s:.5} vs required {required:.5}"),
                    None => "too few samples to fit".into(),
                },
            });
        }
    }

    if let (Some(s), true) = (d.hand1_schedule, wanted(cfg, "hand1_b_over_t2")) {
        if p.x0.z1 == p.x0.z2 {
            out.push(pointwise(
                "hand1_b_over_t2",
                arc.samples
                    .iter()
                    .filter(|x| x.time.j == 0)
                    .map(|x| (obj.gap(&x.state.z1), s.b / (x.state.tau * x.state.tau))),
            ));
        }
    }

    if let (Some(h2), true) = (d.hand2, wanted(cfg, "hand2_exp")) {
        if let Some(mu) = obj.mu() {
            let k = h2.constants(mu, obj.lipschitz_m());
            out.push(pointwise(
                "hand2_exp",
                arc.samples
                    .iter()
                    .map(|x| (obj.gap(&x.state.z1), hand2_rate_bound(x.time.t, x.time.j, &k, &p.x0.z1, star))),
            ));
        }
    }
    Ok(out)
}
