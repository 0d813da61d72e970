//! TOML experiment schema. See `configs/` for one file per experiment.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

use uniting_core::algorithms::HeavyBallParams;
use uniting_core::hybrid::{IntegratorConfig, SettleStop};
use uniting_core::objective::{BuiltinObjective, ObjectiveSpec};

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub objective: BuiltinObjective,
    /// Output directory; `--out` wins over it.
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Integrator settings shared by every run.
    #[serde(default)]
    pub integrator: IntegratorOverrides,
    #[serde(default)]
    pub measurements: Measurements,
    #[serde(default)]
    pub compare: Option<CompareConfig>,
    #[serde(default)]
    pub noise: Option<NoiseConfig>,
    #[serde(default)]
    pub runs: Vec<RunConfig>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorOverrides {
    pub step: Option<f64>,
    pub event_tol: Option<f64>,
    pub t_max: Option<f64>,
    pub j_max: Option<usize>,
    pub record_every: Option<usize>,
    /// Stop once the arc has stayed inside the settling ball this long.
    pub settle_hold: Option<f64>,
}

impl IntegratorOverrides {
    /// `other` wins field by field.
    pub fn layered(&self, other: &IntegratorOverrides) -> IntegratorOverrides {
        IntegratorOverrides {
            step: other.step.or(self.step),
            event_tol: other.event_tol.or(self.event_tol),
            t_max: other.t_max.or(self.t_max),
            j_max: other.j_max.or(self.j_max),
            record_every: other.record_every.or(self.record_every),
            settle_hold: other.settle_hold.or(self.settle_hold),
        }
    }

    pub fn resolve(&self, center: &[f64], settle_fraction: f64) -> IntegratorConfig {
        let d = IntegratorConfig::default();
        IntegratorConfig {
            step: self.step.unwrap_or(d.step),
            event_tol: self.event_tol.unwrap_or(d.event_tol),
            t_max: self.t_max.unwrap_or(d.t_max),
            j_max: self.j_max.unwrap_or(d.j_max),
            record_every: self.record_every.unwrap_or(d.record_every),
            settle_stop: self.settle_hold.map(|hold| SettleStop {
                center: center.to_vec(),
                radius_fraction: settle_fraction,
                hold,
            }),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Measurements {
    #[serde(default = "default_settle_fraction")]
    pub settle_fraction: f64,
    /// Measure settling on `L - L*` instead of `|z1 - z1*|`.
    #[serde(default)]
    pub settle_on_gap: bool,
    /// Envelope checks to report; empty means every one that applies.
    #[serde(default)]
    pub envelopes: Vec<String>,
    /// Heavy-ball rate parameter `m` in (0, 1).
    #[serde(default = "default_rate_m")]
    pub rate_m: f64,
    /// Fraction of the horizon used for tail suprema.
    #[serde(default = "default_tail_fraction")]
    pub tail_fraction: f64,
}

fn default_settle_fraction() -> f64 {
    0.01
}

fn default_rate_m() -> f64 {
    0.5
}

fn default_tail_fraction() -> f64 {
    0.2
}

impl Default for Measurements {
    fn default() -> Self {
        Measurements {
            settle_fraction: default_settle_fraction(),
            settle_on_gap: false,
            envelopes: Vec::new(),
            rate_m: default_rate_m(),
            tail_fraction: default_tail_fraction(),
        }
    }
}

pub const ENVELOPES: [&str; 5] = [
    "uniting_piecewise",
    "nesterov_nsc_9_over_t2",
    "heavy_ball_exp",
    "hand1_b_over_t2",
    "hand2_exp",
];

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    /// Run whose improvement over the others is reported; defaults to the
    /// first uniting run.
    pub reference: Option<String>,
    /// One comparison per row, each from its own initial position.
    #[serde(default)]
    pub sweep: Vec<SweepRow>,
}

/// Overrides applied to every run for one row of a sweep. `z1` sets the
/// initial position (and the initial `z2` of HAND runs, which need
/// `z1 = z2`); the rest patch uniting and HAND-1 parameters where present.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRow {
    pub z1: f64,
    pub c0: Option<f64>,
    pub c10: Option<f64>,
    pub hat_c0: Option<f64>,
    pub r: Option<f64>,
    pub delta_med: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Run to perturb; defaults to the first uniting run.
    pub run: Option<String>,
    pub seeds: Vec<u64>,
    pub sigmas: Vec<f64>,
    /// Spacing of the independent draws.
    #[serde(default = "default_grid")]
    pub grid: f64,
}

fn default_grid() -> f64 {
    0.01
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct RunConfig {
    pub name: String,
    #[serde(flatten)]
    pub algorithm: AlgorithmConfig,
    pub x0: InitialState,
    #[serde(default)]
    pub integrator: IntegratorOverrides,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    pub z1: Vec<f64>,
    /// Defaults to zero.
    pub z2: Option<Vec<f64>>,
    #[serde(default)]
    pub q: u8,
    /// Defaults to 0, or to `t_min` for the HAND baselines.
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    NesterovNsc,
    NesterovSc,
    HbfHbf,
}

/// Parameters of the global flow; which fields are needed depends on the variant.
#[derive(Debug, Clone, Copy, Default, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GlobalParams {
    pub zeta: Option<f64>,
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
}

/// Lipschitz constants and condition numbers always come from the objective.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(tag = "algorithm", rename_all = "snake_case")]
pub enum AlgorithmConfig {
    Uniting {
        variant: VariantKind,
        local: HeavyBallParams,
        global: GlobalParams,
        eps0: f64,
        eps10: f64,
        c0: f64,
        c10: f64,
        hat_c0: Option<f64>,
    },
    HeavyBall {
        lambda: f64,
        gamma: f64,
    },
    NesterovNsc {
        zeta: f64,
    },
    NesterovSc {
        zeta: f64,
    },
    GradientDescent {
        gamma: f64,
    },
    TripleMomentum {},
    /// Either an explicit `t_med`/`t_max` or a schedule derived from `r` and `delta_med`.
    Hand1 {
        c1: f64,
        t_min: f64,
        t_med: Option<f64>,
        t_max: Option<f64>,
        r: Option<f64>,
        delta_med: Option<f64>,
    },
    Hand2 {
        c: f64,
        t_min: f64,
        t_max: f64,
    },
}

impl AlgorithmConfig {
    pub fn name(&self) -> &'static str {
        match self {
            AlgorithmConfig::Uniting { .. } => "uniting",
            AlgorithmConfig::HeavyBall { .. } => "heavy_ball",
            AlgorithmConfig::NesterovNsc { .. } => "nesterov_nsc",
            AlgorithmConfig::NesterovSc { .. } => "nesterov_sc",
            AlgorithmConfig::GradientDescent { .. } => "gradient_descent",
            AlgorithmConfig::TripleMomentum {} => "triple_momentum",
            AlgorithmConfig::Hand1 { .. } => "hand1",
            AlgorithmConfig::Hand2 { .. } => "hand2",
        }
    }

    pub fn is_hand(&self) -> bool {
        matches!(self, AlgorithmConfig::Hand1 { .. } | AlgorithmConfig::Hand2 { .. })
    }

    fn t_min(&self) -> Option<f64> {
        match self {
            AlgorithmConfig::Hand1 { t_min, .. } | AlgorithmConfig::Hand2 { t_min, .. } => Some(*t_min),
            _ => None,
        }
    }

    /// Patches the parameters a sweep row carries.
    pub fn apply_row(&mut self, row: &SweepRow) {
        match self {
            AlgorithmConfig::Uniting { c0, c10, hat_c0, .. } => {
                if let Some(v) = row.c0 {
                    *c0 = v;
                    // Keep the usual "hat c0 = c0 + 1" offset when the row moves c0.
                    if row.hat_c0.is_none() {
                        *hat_c0 = hat_c0.map(|_| v + 1.0);
                    }
                }
                if let Some(v) = row.c10 {
                    *c10 = v;
                }
                if let Some(v) = row.hat_c0 {
                    *hat_c0 = Some(v);
                }
            }
            AlgorithmConfig::Hand1 { r, delta_med, .. } => {
                if row.r.is_some() {
                    *r = row.r;
                }
                if row.delta_med.is_some() {
                    *delta_med = row.delta_med;
                }
            }
            _ => {}
        }
    }
}

impl RunConfig {
    pub fn tau0(&self) -> f64 {
        self.x0.tau.or(self.algorithm.t_min()).unwrap_or(0.0)
    }

    pub fn apply_row(&mut self, row: &SweepRow) {
        self.x0.z1 = vec![row.z1];
        if self.algorithm.is_hand() {
            self.x0.z2 = Some(vec![row.z1]);
        }
        self.algorithm.apply_row(row);
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn objective(&self) -> Result<ObjectiveSpec> {
        ObjectiveSpec::builtin(self.objective.clone()).context("objective")
    }

    pub fn validate(&self) -> Result<()> {
        let obj = self.objective()?;
        ensure!(!self.runs.is_empty(), "runs: at least one run is required");
        let m = &self.measurements;
        ensure!(
            m.settle_fraction > 0.0 && m.settle_fraction < 1.0,
            "measurements.settle_fraction: must lie in (0, 1), got {}",
            m.settle_fraction
        );
        ensure!(m.rate_m > 0.0 && m.rate_m < 1.0, "measurements.rate_m: must lie in (0, 1), got {}", m.rate_m);
        ensure!(
            m.tail_fraction > 0.0 && m.tail_fraction <= 1.0,
            "measurements.tail_fraction: must lie in (0, 1], got {}",
            m.tail_fraction
        );
        for e in &m.envelopes {
            ensure!(
                ENVELOPES.contains(&e.as_str()),
                "measurements.envelopes: unknown envelope `{e}`, expected one of {ENVELOPES:?}"
            );
        }

        let mut names = HashSet::new();
        for (i, run) in self.runs.iter().enumerate() {
            let at = format!("runs[{i}] ({})", run.name);
            ensure!(!run.name.is_empty(), "runs[{i}].name: must not be empty");
            ensure!(names.insert(run.name.as_str()), "runs[{i}].name: duplicate run name `{}`", run.name);
            ensure!(
                run.x0.z1.len() == obj.dim(),
                "{at}: x0.z1 has {} entries but the objective has dimension {}",
                run.x0.z1.len(),
                obj.dim()
            );
            if let Some(z2) = &run.x0.z2 {
                ensure!(z2.len() == obj.dim(), "{at}: x0.z2 has {} entries, expected {}", z2.len(), obj.dim());
            }
            ensure!(run.x0.q <= 1, "{at}: x0.q must be 0 or 1, got {}", run.x0.q);
            self.integrator
                .layered(&run.integrator)
                .resolve(obj.minimizer(), m.settle_fraction)
                .validate()
                .with_context(|| format!("{at}: integrator"))?;
        }

        if let Some(c) = &self.compare {
            if let Some(r) = &c.reference {
                ensure!(names.contains(r.as_str()), "compare.reference: no run named `{r}`");
            }
            if !c.sweep.is_empty() {
                ensure!(obj.dim() == 1, "compare.sweep: sweeps need a one-dimensional objective");
            }
        }
        if let Some(n) = &self.noise {
            if let Some(r) = &n.run {
                ensure!(names.contains(r.as_str()), "noise.run: no run named `{r}`");
            }
            ensure!(!n.seeds.is_empty(), "noise.seeds: at least one seed is required");
            ensure!(!n.sigmas.is_empty(), "noise.sigmas: at least one sigma is required");
            for &s in &n.sigmas {
                ensure!(s >= 0.0 && s.is_finite(), "noise.sigmas: sigma must be finite and nonnegative, got {s}");
            }
            ensure!(n.grid > 0.0, "noise.grid: must be positive, got {}", n.grid);
        }
        Ok(())
    }

    pub fn run_named(&self, name: &str) -> Result<&RunConfig> {
        match self.runs.iter().find(|r| r.name == name) {
            Some(r) => Ok(r),
            None => bail!("no run named `{name}`"),
        }
    }

    pub fn first_uniting(&self) -> Option<&RunConfig> {
        self.runs.iter().find(|r| matches!(r.algorithm, AlgorithmConfig::Uniting { .. }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        objective = { kind = "scalar_quadratic", a = 1.0 }

        [[runs]]
        name = "hb"
        algorithm = "heavy_ball"
        lambda = 200
        gamma = 0.6666666666666666
        x0 = { z1 = [50.0] }
    "#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.measurements.settle_fraction, 0.01);
        assert_eq!(cfg.runs[0].algorithm, AlgorithmConfig::HeavyBall { lambda: 200.0, gamma: 2.0 / 3.0 });
        assert_eq!(cfg.runs[0].tau0(), 0.0);
    }

    #[test]
    fn empty_runs_rejected() {
        let err = ExperimentConfig::parse(r#"objective = { kind = "scalar_quadratic", a = 1.0 }"#).unwrap_err();
        assert!(format!("{err:#}").contains("runs"), "{err:#}");
    }

    #[test]
    fn missing_objective_name_rejected() {
        let text = MINIMAL.replace(r#"kind = "scalar_quadratic", "#, "");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        assert!(format!("{err:#}").contains("kind"), "{err:#}");
    }

    #[test]
    fn unknown_algorithm_rejected() {
        let text = MINIMAL.replace("heavy_ball", "steepest_ascent");
        assert!(ExperimentConfig::parse(&text).is_err());
    }

    #[test]
    fn dimension_mismatch_names_the_run() {
        let text = MINIMAL.replace("z1 = [50.0]", "z1 = [50.0, 1.0]");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        assert!(format!("{err:#}").contains("runs[0] (hb)"), "{err:#}");
    }

    #[test]
    fn hand_runs_start_at_t_min() {
        let text = r#"
            objective = { kind = "scalar_quadratic", a = 1.0 }
            [[runs]]
            name = "h"
            algorithm = "hand2"
            c = 0.78125
            t_min = 3.0
            t_max = 4.3
            x0 = { z1 = [50.0], z2 = [50.0] }
        "#;
        assert_eq!(ExperimentConfig::parse(text).unwrap().runs[0].tau0(), 3.0);
    }

    #[test]
    fn sweep_row_patches_runs() {
        let mut run = RunConfig {
            name: "u".into(),
            algorithm: AlgorithmConfig::Uniting {
                variant: VariantKind::NesterovNsc,
                local: HeavyBallParams { lambda: 200.0, gamma: 2.0 / 3.0 },
                global: GlobalParams { zeta: Some(2.0), ..Default::default() },
                eps0: 10.0,
                eps10: 5.0,
                c0: 7000.0,
                c10: 6819.676,
                hat_c0: Some(7001.0),
            },
            x0: InitialState { z1: vec![50.0], z2: None, q: 1, tau: None },
            integrator: IntegratorOverrides::default(),
        };
        let row = SweepRow { z1: 20.0, c0: Some(2000.0), c10: Some(1154.148), hat_c0: None, r: Some(21.0), delta_med: Some(8112.0) };
        run.apply_row(&row);
        assert_eq!(run.x0.z1, vec![20.0]);
        assert_eq!(run.x0.z2, None);
        match run.algorithm {
            AlgorithmConfig::Uniting { c0, c10, hat_c0, .. } => assert_eq!((c0, c10, hat_c0), (2000.0, 1154.148, Some(2001.0))),
            _ => unreachable!(),
        }
    }

    #[test]
    fn overrides_layer_field_by_field() {
        let base = IntegratorOverrides { step: Some(1e-3), t_max: Some(5.0), ..Default::default() };
        let run = IntegratorOverrides { t_max: Some(50.0), ..Default::default() };
        let merged = base.layered(&run);
        assert_eq!(merged.step, Some(1e-3));
        assert_eq!(merged.t_max, Some(50.0));
    }
}
