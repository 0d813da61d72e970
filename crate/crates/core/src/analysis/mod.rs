//! Measurement side of the laboratory: Lyapunov functions, rate envelopes,
//! settling times and gradient noise. Everything here may read the minimizer.

mod lyapunov;
mod noise;
mod rates;

pub use lyapunov::{
    envelope_nesterov_monitor, gap_monitor, v0, v0_monitor, v1, v1_monitor, v_alt, valt_monitor, FnMonitor,
};
pub use noise::{perturb_gradient, NoiseProcess, NoisyOracle, Perturbable};
pub use rates::{
    fit_log_slope, nesterov_envelope, nesterov_envelope_constant, percent_improvement, settling_time,
    settling_time_by_gap, tail_limsup, uniting_envelope, EnvelopeReport, RateEnvelope, SegmentCheck, Settling,
};
