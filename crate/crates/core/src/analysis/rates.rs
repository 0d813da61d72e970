use serde::Serialize;

use crate::algorithms::RateParams;
use crate::baselines::Hand2Constants;
use crate::error::{require_positive, Error, Result};
use crate::hybrid::{Mode, SolutionArc};
use crate::objective::ObjectiveSpec;
use crate::uniting::UnitingVariant;
use crate::vecops::{dist, norm_sq};

/// Slack on asserted decay exponents, to absorb discretization and the
/// finite fitting window.
const SLOPE_SLACK: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Settling {
    At(f64),
    NotSettled,
}

impl Settling {
    pub fn time(self) -> Option<f64> {
        match self {
            Settling::At(t) => Some(t),
            Settling::NotSettled => None,
        }
    }
}

/// Last-crossing settling time: the earliest sample time from which every
/// later sample satisfies `|z1 - z1*| <= fraction |z1(0,0) - z1*|`.
pub fn settling_time(arc: &SolutionArc, obj: &ObjectiveSpec, fraction: f64) -> Result<Settling> {
    let star = obj.minimizer();
    let r0 = dist(&arc.initial().state.z1, star);
    last_crossing(arc, fraction, r0, |z1| dist(z1, star))
}

/// Same as [`settling_time`] but measured on `L - L*` relative to its initial value.
pub fn settling_time_by_gap(arc: &SolutionArc, obj: &ObjectiveSpec, fraction: f64) -> Result<Settling> {
    let g0 = obj.gap(&arc.initial().state.z1);
    last_crossing(arc, fraction, g0, |z1| obj.gap(z1))
}

fn last_crossing(arc: &SolutionArc, fraction: f64, scale: f64, measure: impl Fn(&[f64]) -> f64) -> Result<Settling> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid("fraction", format!("must lie in (0, 1), got {fraction}")));
    }
    if scale == 0.0 {
        return Ok(Settling::At(0.0));
    }
    let threshold = fraction * scale;
    let outside = arc.samples.iter().rposition(|s| measure(&s.state.z1) > threshold);
    Ok(match outside {
        None => Settling::At(arc.initial().time.t),
        Some(i) if i + 1 == arc.samples.len() => Settling::NotSettled,
        Some(i) => Settling::At(arc.samples[i + 1].time.t),
    })
}

/// `(t_other - t_H) / t_other * 100`
pub fn percent_improvement(t_other: f64, t_h: f64) -> Result<f64> {
    require_positive("t_other", t_other)?;
    if !(t_h >= 0.0) {
        return Err(Error::invalid("t_h", format!("must be nonnegative, got {t_h}")));
    }
    Ok((t_other - t_h) / t_other * 100.0)
}

/// `c = (1 + zeta^2) exp(sqrt(13/4 + zeta^4 / M))`
pub fn nesterov_envelope_constant(zeta: f64, lipschitz_m: f64) -> f64 {
    (1.0 + zeta * zeta) * (13.0 / 4.0 + zeta.powi(4) / lipschitz_m).sqrt().exp()
}

/// `9c/(t+2)^2 (|z1(0) - z1*|^2 + |z2(0)|^2)`, a bound on `(zeta^2/M)(L - L*)`
/// along the Nesterov flow for `t >= 1`.
pub fn nesterov_envelope(t: f64, zeta: f64, lipschitz_m: f64, z1_0: &[f64], z2_0: &[f64], z1_star: &[f64]) -> f64 {
    let d = dist(z1_0, z1_star);
    let c = nesterov_envelope_constant(zeta, lipschitz_m);
    9.0 * c / ((t + 2.0) * (t + 2.0)) * (d * d + norm_sq(z2_0))
}

/// Least-squares slope of `ln y` against `t`, skipping nonpositive `y`.
/// Needs at least three usable points.
pub fn fit_log_slope(points: impl IntoIterator<Item = (f64, f64)>) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .into_iter()
        .filter(|&(_, y)| y > 0.0 && y.is_finite())
        .map(|(t, y)| (t, y.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt) * (p.0 - mt)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Largest `|z1 - z1*|` and `L - L*` over samples with
/// `t >= (1 - tail_fraction) * t_final`.
pub fn tail_limsup(arc: &SolutionArc, obj: &ObjectiveSpec, tail_fraction: f64) -> (f64, f64) {
    let start = (1.0 - tail_fraction) * arc.final_time().t;
    arc.samples
        .iter()
        .filter(|s| s.time.t >= start)
        .fold((0.0f64, 0.0f64), |(d, g), s| {
            (d.max(dist(&s.state.z1, obj.minimizer())), g.max(obj.gap(&s.state.z1)))
        })
}

/// Analytic convergence envelopes. Exponential kinds carry the decay
/// exponent of `L - L*` that is asserted; their constants are fitted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum RateEnvelope {
    NesterovNsc9OverT2 { zeta: f64, lipschitz_m: f64 },
    HeavyBallExp { rate: f64 },
    ScNesterovExp { a: f64 },
    Hand1BOverT2 { b: f64 },
    Hand2Exp(Hand2Constants),
    /// Global envelope on `q = 1` segments (none for the heavy-ball pair),
    /// exponential decay at `local_rate` on `q = 0` segments.
    UnitingPiecewise {
        global: Option<Box<RateEnvelope>>,
        local_rate: f64,
    },
}

impl RateEnvelope {
    pub fn name(&self) -> &'static str {
        match self {
            RateEnvelope::NesterovNsc9OverT2 { .. } => "nesterov_nsc_9_over_t2",
            RateEnvelope::HeavyBallExp { .. } => "heavy_ball_exp",
            RateEnvelope::ScNesterovExp { .. } => "sc_nesterov_exp",
            RateEnvelope::Hand1BOverT2 { .. } => "hand1_b_over_t2",
            RateEnvelope::Hand2Exp(_) => "hand2_exp",
            RateEnvelope::UnitingPiecewise { .. } => "uniting_piecewise",
        }
    }

    /// Envelope for a uniting variant with heavy-ball rate parameter `m`:
    /// local exponent `(1-m) psi` for the Nesterov pairs, `psi/2` for the
    /// heavy-ball pair.
    pub fn for_uniting(variant: &UnitingVariant, alpha: f64, m: f64) -> Result<RateEnvelope> {
        let rate = RateParams::new(m, alpha, &variant.local())?;
        Ok(match *variant {
            UnitingVariant::NesterovNsc { global, .. } => RateEnvelope::UnitingPiecewise {
                global: Some(Box::new(RateEnvelope::NesterovNsc9OverT2 {
                    zeta: global.zeta,
                    lipschitz_m: global.lipschitz_m,
                })),
                local_rate: rate.decay(),
            },
            UnitingVariant::NesterovSc { global, .. } => RateEnvelope::UnitingPiecewise {
                global: Some(Box::new(RateEnvelope::ScNesterovExp { a: global.rate_a() })),
                local_rate: rate.decay(),
            },
            UnitingVariant::HbfHbf { .. } => RateEnvelope::UnitingPiecewise {
                global: None,
                local_rate: rate.psi / 2.0,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentCheck {
    /// Jump index of the segment.
    pub j: usize,
    pub mode: Mode,
    pub envelope: &'static str,
    pub passed: bool,
    /// True when the segment was too short to say anything.
    pub skipped: bool,
    pub fitted_slope: Option<f64>,
    pub required_slope: Option<f64>,
    /// Largest measured/envelope ratio for pointwise envelopes.
    pub worst_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvelopeReport {
    pub jumps: usize,
    pub structure_ok: bool,
    pub segments: Vec<SegmentCheck>,
}

impl EnvelopeReport {
    pub fn passed(&self) -> bool {
        self.structure_ok && self.segments.iter().all(|s| s.passed)
    }
}

/// Segment-wise rate check of a uniting arc against a
/// [`RateEnvelope::UnitingPiecewise`] envelope.
pub fn uniting_envelope(arc: &SolutionArc, obj: &ObjectiveSpec, envelope: &RateEnvelope) -> Result<EnvelopeReport> {
    let RateEnvelope::UnitingPiecewise { global, local_rate } = envelope else {
        return Err(Error::invalid("envelope", "uniting arcs are checked against a piecewise envelope"));
    };
    let jumps = arc.jump_count();
    let mut report = EnvelopeReport {
        jumps,
        structure_ok: jumps <= 2,
        segments: Vec::new(),
    };
    if !report.structure_ok {
        return Ok(report);
    }
    for j in 0..=jumps {
        let seg: Vec<_> = arc.samples.iter().filter(|s| s.time.j == j).collect();
        let Some(first) = seg.first() else { continue };
        let mode = first.state.q;
        let check = match (mode, global.as_deref()) {
            (Mode::Local, _) => tail_slope_check(j, mode, "heavy_ball_exp", &seg, obj, *local_rate),
            (Mode::Global, None) => SegmentCheck {
                j,
                mode,
                envelope: "none",
                passed: true,
                skipped: true,
                fitted_slope: None,
                required_slope: None,
                worst_ratio: None,
            },
            (Mode::Global, Some(RateEnvelope::NesterovNsc9OverT2 { zeta, lipschitz_m })) => {
                let (z1s, z2s) = (&first.state.z1, &first.state.z2);
                let gain = zeta * zeta / lipschitz_m;
                let mut worst: Option<f64> = None;
                for s in seg.iter().filter(|s| s.state.tau >= 1.0) {
                    let env = nesterov_envelope(s.state.tau, *zeta, *lipschitz_m, z1s, z2s, obj.minimizer());
                    let ratio = gain * obj.gap(&s.state.z1) / env;
                    worst = Some(worst.map_or(ratio, |w: f64| w.max(ratio)));
                }
                SegmentCheck {
                    j,
                    mode,
                    envelope: "nesterov_nsc_9_over_t2",
                    passed: worst.is_none_or(|w| w <= 1.0),
                    skipped: worst.is_none(),
                    fitted_slope: None,
                    required_slope: None,
                    worst_ratio: worst,
                }
            }
            (Mode::Global, Some(RateEnvelope::ScNesterovExp { a })) => {
                let pts = seg.iter().map(|s| (s.time.t, obj.gap(&s.state.z1)));
                slope_check(j, mode, "sc_nesterov_exp", fit_log_slope(pts), *a)
            }
            (Mode::Global, Some(other)) => {
                return Err(Error::invalid(
                    "envelope",
                    format!("{} is not a global envelope for uniting arcs", other.name()),
                ))
            }
        };
        report.segments.push(check);
    }
    Ok(report)
}

fn tail_slope_check(
    j: usize,
    mode: Mode,
    name: &'static str,
    seg: &[&crate::hybrid::Sample],
    obj: &ObjectiveSpec,
    rate: f64,
) -> SegmentCheck {
    let half = seg.len() / 2;
    let pts = seg[half..].iter().map(|s| (s.time.t, obj.gap(&s.state.z1)));
    slope_check(j, mode, name, fit_log_slope(pts), rate)
}

fn slope_check(j: usize, mode: Mode, name: &'static str, fitted: Option<f64>, rate: f64) -> SegmentCheck {
    let required = -(1.0 - SLOPE_SLACK) * rate;
    SegmentCheck {
        j,
        mode,
        envelope: name,
        passed: fitted.is_none_or(|s| s <= required),
        skipped: fitted.is_none(),
        fitted_slope: fitted,
        required_slope: Some(required),
        worst_ratio: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybrid::{HybridState, HybridTime, Sample, Termination};
    use crate::objective::make_scalar_quadratic;

    fn arc_from(points: &[(f64, f64)]) -> SolutionArc {
        SolutionArc {
            samples: points
                .iter()
                .map(|&(t, z)| Sample {
                    time: HybridTime::new(t, 0),
                    state: HybridState::scalar(z, 0.0, Mode::Local, 0.0),
                })
                .collect(),
            jumps: vec![],
            monitor_names: vec![],
            monitor_values: vec![],
            termination: Termination::TMaxReached,
        }
    }

    #[test]
    fn settling_is_last_crossing() {
        let obj = make_scalar_quadratic(1.0).unwrap();
        // Dips inside at t = 1, leaves again at t = 2, settles from t = 3.
        let arc = arc_from(&[(0.0, 50.0), (1.0, 0.1), (2.0, -0.8), (3.0, 0.4), (4.0, 0.01)]);
        assert_eq!(settling_time(&arc, &obj, 0.01).unwrap(), Settling::At(3.0));
        let arc = arc_from(&[(0.0, 50.0), (1.0, 0.1), (2.0, 0.8)]);
        assert_eq!(settling_time(&arc, &obj, 0.01).unwrap(), Settling::NotSettled);
        let arc = arc_from(&[(0.0, 0.0), (1.0, 0.0)]);
        assert_eq!(settling_time(&arc, &obj, 0.01).unwrap(), Settling::At(0.0));
        assert!(settling_time(&arc, &obj, 1.5).is_err());
    }

    #[test]
    fn percent_improvement_values() {
        assert!((percent_improvement(8.649, 0.811).unwrap() - 90.6).abs() < 0.05);
        assert!((percent_improvement(690.759, 0.811).unwrap() - 99.9).abs() < 0.05);
        assert_eq!(percent_improvement(3.0, 3.0).unwrap(), 0.0);
        assert_eq!(percent_improvement(3.0, 0.0).unwrap(), 100.0);
        assert!(percent_improvement(0.0, 1.0).is_err());
    }

    #[test]
    fn envelope_constant_closed_form() {
        // zeta = 2, M = 2: 13/4 + 16/2 = 11.25
        let c = nesterov_envelope_constant(2.0, 2.0);
        assert!((c - 5.0 * 11.25f64.sqrt().exp()).abs() < 1e-9);
        assert!((c - 143.099_455).abs() < 1e-5);
        assert_eq!(nesterov_envelope(3.0, 2.0, 2.0, &[0.0], &[0.0], &[0.0]), 0.0);
    }

    #[test]
    fn log_slope_of_exponential() {
        let pts = (0..50).map(|k| {
            let t = k as f64 * 0.1;
            (t, 3.0 * (-0.7 * t).exp())
        });
        assert!((fit_log_slope(pts).unwrap() + 0.7).abs() < 1e-12);
        assert!(fit_log_slope([(0.0, 1.0), (1.0, 0.5)]).is_none());
    }
}
