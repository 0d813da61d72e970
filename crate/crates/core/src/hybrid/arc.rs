use std::io;

use serde::{Deserialize, Serialize};

use super::{HybridState, HybridTime, Mode};
use crate::vecops::dist;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    TMaxReached,
    JMaxReached,
    LeftCAndD,
    Settled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub time: HybridTime,
    pub state: HybridState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpRecord {
    pub t: f64,
    pub j_before: usize,
    pub state_before: HybridState,
    pub state_after: HybridState,
}

/// A solution sampled on its hybrid time domain.
///
/// `monitor_values[k][i]` is monitor `k` evaluated at `samples[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionArc {
    pub samples: Vec<Sample>,
    pub jumps: Vec<JumpRecord>,
    pub monitor_names: Vec<String>,
    pub monitor_values: Vec<Vec<f64>>,
    pub termination: Termination,
}

impl SolutionArc {
    pub fn initial(&self) -> &Sample {
        &self.samples[0]
    }

    pub fn last(&self) -> &Sample {
        self.samples.last().expect("a solution arc always holds its initial sample")
    }

    pub fn final_state(&self) -> &HybridState {
        &self.last().state
    }

    pub fn final_time(&self) -> HybridTime {
        self.last().time
    }

    pub fn jump_count(&self) -> usize {
        self.jumps.len()
    }

    pub fn jump_times(&self) -> Vec<f64> {
        self.jumps.iter().map(|r| r.t).collect()
    }

    pub fn monitor(&self, name: &str) -> Option<&[f64]> {
        let k = self.monitor_names.iter().position(|n| n == name)?;
        Some(&self.monitor_values[k])
    }

    /// Samples whose mode is `q`, in order.
    pub fn samples_in_mode(&self, q: Mode) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.state.q == q)
    }

    /// `|z1 - center|` at every sample.
    pub fn distances_to(&self, center: &[f64]) -> Vec<f64> {
        self.samples.iter().map(|s| dist(&s.state.z1, center)).collect()
    }

    /// Column headers of the CSV layout.
    pub fn csv_header(&self) -> Vec<String> {
        let n = self.initial().state.dim();
        let mut h: Vec<String> = ["t", "j", "q", "tau"].iter().map(|s| s.to_string()).collect();
        h.extend((0..n).map(|i| format!("z1_{i}")));
        h.extend((0..n).map(|i| format!("z2_{i}")));
        h.extend(self.monitor_names.iter().cloned());
        h
    }

    /// Writes `t, j, q, tau, z1_*, z2_*, <monitors>` with one row per sample.
    pub fn write_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.csv_header())?;
        let mut row = Vec::new();
        for (i, s) in self.samples.iter().enumerate() {
            row.clear();
            row.push(format!("{}", s.time.t));
            row.push(s.time.j.to_string());
            row.push(s.state.q.to_string());
            row.push(format!("{}", s.state.tau));
            row.extend(s.state.z1.iter().map(|v| format!("{v}")));
            row.extend(s.state.z2.iter().map(|v| format!("{v}")));
            row.extend(self.monitor_values.iter().map(|col| format!("{}", col[i])));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}
