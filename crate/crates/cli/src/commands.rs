use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use uniting_core::analysis::{percent_improvement, tail_limsup};
use uniting_core::baselines::Hand2Params;
use uniting_core::hybrid::Termination;
use uniting_core::uniting::validate_hysteresis;
use uniting_core::vecops::dist;

use crate::config::{ExperimentConfig, RunConfig, SweepRow};
use crate::experiment::{prepare, settle, summarize, Prepared, RunOptions, RunSummary};

/// Writes through a temporary sibling and renames, so readers never see a
/// half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming {} to {}", tmp.display(), path.display()))
}

fn out_dir(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<PathBuf> {
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir).with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir)
}

fn fmt_time(t: Option<f64>) -> String {
    t.map_or_else(|| "not settled".into(), |t| format!("{t:.4}"))
}

fn prepare_all(cfg: &ExperimentConfig, runs: &[RunConfig], opts: &RunOptions) -> Result<Vec<Prepared>> {
    let obj = cfg.objective()?;
    runs.iter().map(|r| prepare(cfg, r, &obj, opts)).collect()
}

pub fn cmd_run(cfg: &ExperimentConfig, out: Option<&Path>, opts: &RunOptions) -> Result<Vec<RunSummary>> {
    let obj = cfg.objective()?;
    let prepared = prepare_all(cfg, &cfg.runs, opts)?;
    let dir = out_dir(cfg, out)?;
    let summaries: Vec<RunSummary> = prepared
        .par_iter()
        .map(|p| -> Result<RunSummary> {
            let arc = p.solve(&obj)?;
            let file = format!("{}.csv", p.name);
            write_atomic(&dir.join(&file), arc.to_csv_string().as_bytes())?;
            let mut s = summarize(p, &arc, &obj, cfg)?;
            s.trace = Some(file);
            Ok(s)
        })
        .collect::<Result<_>>()?;
    write_atomic(&dir.join("runs.json"), serde_json::to_string_pretty(&summaries)?.as_bytes())?;

    println!("{:<16} {:<16} {:>12} {:>6}  {}", "run", "algorithm", "settling [s]", "jumps", "envelopes");
    for s in &summaries {
        let env: Vec<String> = s
            .envelope_checks
            .iter()
            .map(|e| format!("{} {}", e.envelope, if e.passed { "ok" } else { "VIOLATED" }))
            .collect();
        println!(
            "{:<16} {:<16} {:>12} {:>6}  {}",
            s.name,
            s.algorithm,
            fmt_time(s.settling_time),
            s.jump_count,
            env.join(", ")
        );
    }
    println!("wrote {} traces and runs.json to {}", summaries.len(), dir.display());
    Ok(summaries)
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub row: usize,
    pub z1_0: f64,
    pub run: String,
    pub algorithm: &'static str,
    pub settling_time: Option<f64>,
    /// Improvement of the reference run over this one; `None` for the reference itself.
    pub improvement_pct: Option<f64>,
}

pub fn cmd_compare(cfg: &ExperimentConfig, out: Option<&Path>, opts: &RunOptions) -> Result<Vec<ComparisonRow>> {
    ensure!(cfg.runs.len() >= 2, "runs: compare needs at least two runs, got {}", cfg.runs.len());
    let obj = cfg.objective()?;
    let reference = match cfg.compare.as_ref().and_then(|c| c.reference.clone()) {
        Some(r) => r,
        None => cfg.first_uniting().unwrap_or(&cfg.runs[0]).name.clone(),
    };
    let rows: Vec<Option<&SweepRow>> = match &cfg.compare {
        Some(c) if !c.sweep.is_empty() => c.sweep.iter().map(Some).collect(),
        _ => vec![None],
    };

    let mut jobs = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        let runs: Vec<RunConfig> = cfg
            .runs
            .iter()
            .map(|r| {
                let mut r = r.clone();
                if let Some(row) = row {
                    r.apply_row(row);
                }
                r
            })
            .collect();
        for p in prepare_all(cfg, &runs, opts).with_context(|| format!("sweep row {i}"))? {
            jobs.push((i, p));
        }
    }
    let times: Vec<Option<f64>> = jobs
        .par_iter()
        .map(|(_, p)| settle(&p.solve(&obj)?, &obj, cfg))
        .collect::<Result<_>>()?;

    let mut table = Vec::new();
    for (i, _) in rows.iter().enumerate() {
        let in_row: Vec<(&Prepared, Option<f64>)> = jobs
            .iter()
            .zip(&times)
            .filter(|((r, _), _)| *r == i)
            .map(|((_, p), t)| (p, *t))
            .collect();
        let t_ref = in_row
            .iter()
            .find(|(p, _)| p.name == reference)
            .map(|(_, t)| *t)
            .context("reference run missing")?;
        for (p, t) in &in_row {
            let improvement = match (p.name == reference, *t, t_ref) {
                (false, Some(t), Some(t_ref)) => Some(percent_improvement(t, t_ref)?),
                _ => None,
            };
            table.push(ComparisonRow {
                row: i,
                z1_0: p.x0.z1[0],
                run: p.name.clone(),
                algorithm: p.algorithm,
                settling_time: *t,
                improvement_pct: improvement,
            });
        }
    }

    let dir = out_dir(cfg, out)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["row", "z1_0", "run", "algorithm", "settling_time", "improvement_pct"])?;
    for r in &table {
        w.write_record([
            r.row.to_string(),
            r.z1_0.to_string(),
            r.run.clone(),
            r.algorithm.to_string(),
            r.settling_time.map_or(String::new(), |t| t.to_string()),
            r.improvement_pct.map_or(String::new(), |p| p.to_string()),
        ])?;
    }
    write_atomic(&dir.join("comparison.csv"), &w.into_inner()?)?;

    let text = comparison_text(&table, &reference);
    write_atomic(&dir.join("comparison.txt"), text.as_bytes())?;
    print!("{text}");
    Ok(table)
}

fn comparison_text(table: &[ComparisonRow], reference: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "settling times [s] and improvement of `{reference}` over each run");
    let _ = writeln!(s, "{:>4} {:>10} {:<16} {:>12} {:>14}", "row", "z1(0,0)", "run", "settling", "improvement %");
    for r in table {
        let _ = writeln!(
            s,
            "{:>4} {:>10} {:<16} {:>12} {:>14}",
            r.row,
            r.z1_0,
            r.run,
            fmt_time(r.settling_time),
            r.improvement_pct.map_or("-".into(), |p| format!("{p:.1}"))
        );
    }
    s
}

#[derive(Debug, Clone, Serialize)]
pub struct NoiseRow {
    pub sigma: f64,
    pub seed: u64,
    pub termination: Termination,
    pub settling_time: Option<f64>,
    pub limsup_dist: f64,
    pub limsup_gap: f64,
}

pub fn cmd_noise(
    cfg: &ExperimentConfig,
    out: Option<&Path>,
    opts: &RunOptions,
    seed: Option<u64>,
) -> Result<Vec<NoiseRow>> {
    let Some(noise) = &cfg.noise else {
        bail!("noise: the config has no [noise] section");
    };
    let obj = cfg.objective()?;
    let run = match &noise.run {
        Some(name) => cfg.run_named(name)?,
        None => cfg.first_uniting().context("noise.run: no uniting run to perturb")?,
    };
    let p = prepare(cfg, run, &obj, opts)?;
    let seeds = seed.map_or_else(|| noise.seeds.clone(), |s| vec![s]);
    let cases: Vec<(f64, u64)> = noise
        .sigmas
        .iter()
        .flat_map(|&sigma| seeds.iter().map(move |&seed| (sigma, seed)))
        .collect();
    let rows: Vec<NoiseRow> = cases
        .par_iter()
        .map(|&(sigma, seed)| -> Result<NoiseRow> {
            let arc = p.solve_noisy(&obj, seed, sigma, noise.grid)?;
            let (limsup_dist, limsup_gap) = tail_limsup(&arc, &obj, cfg.measurements.tail_fraction);
            Ok(NoiseRow {
                sigma,
                seed,
                termination: arc.termination,
                settling_time: settle(&arc, &obj, cfg)?,
                limsup_dist,
                limsup_gap,
            })
        })
        .collect::<Result<_>>()?;

    let dir = out_dir(cfg, out)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r)?;
    }
    write_atomic(&dir.join("noise.csv"), &w.into_inner()?)?;

    println!(
        "{:>8} {:>6} {:>14} {:>12} {:>16} {:>16}",
        "sigma", "seed", "termination", "settling", "limsup |z1-z1*|", "limsup L-L*"
    );
    for r in &rows {
        println!(
            "{:>8} {:>6} {:>14} {:>12} {:>16.4e} {:>16.4e}",
            r.sigma,
            r.seed,
            format!("{:?}", r.termination),
            fmt_time(r.settling_time),
            r.limsup_dist,
            r.limsup_gap
        );
    }
    Ok(rows)
}

/// Prints derived constants and sampled checks; `Ok(false)` when a check fails.
pub fn cmd_validate(cfg: &ExperimentConfig, opts: &RunOptions, seed: Option<u64>) -> Result<bool> {
    let obj = cfg.objective()?;
    let seed = seed.unwrap_or(0);
    let mut ok = true;

    let radius = cfg
        .runs
        .iter()
        .map(|r| 2.0 * dist(&r.x0.z1, obj.minimizer()))
        .fold(200.0, f64::max);
    let check = obj.verify_sampled(10_000, radius, seed);
    println!(
        "objective: dim {}, alpha {}, M {}, mu {:?}; sampled growth/Lipschitz check {} ({} samples)",
        obj.dim(),
        obj.alpha(),
        obj.lipschitz_m(),
        obj.mu(),
        if check.passed() { "ok" } else { "FAILED" },
        check.samples
    );
    ok &= check.passed();

    for run in &cfg.runs {
        println!("run `{}` ({})", run.name, run.algorithm.name());
        let p = match prepare(cfg, run, &obj, opts) {
            Ok(p) => p,
            Err(e) => {
                println!("  FAILED: {e:#}");
                ok = false;
                continue;
            }
        };
        let d = &p.derived;
        if let Some(u) = &d.uniting {
            println!("  c~0 = {}, c~10 = {}, d0 = {:.6}, d10 = {:.6}, hat c0 = {}", u.c_tilde0, u.c_tilde10, u.d0, u.d10, u.hat_c0);
            let rep = validate_hysteresis(u, obj.problem(), obj.minimizer(), radius, 100_000, seed);
            println!(
                "  hysteresis on {} samples (radius {radius}): (a) T10 inside U0 {}; (b) T10 and T01 disjoint {}; (c) U0 and T01 cover {}",
                rep.samples,
                if rep.containment_ok() { "ok" } else { "FAILED" },
                if rep.disjoint_ok() { "ok" } else { "FAILED" },
                if rep.covering_ok() { "ok" } else { "gap" },
            );
            if !rep.covering_ok() {
                if let Some((z1, z2, _)) = rep.counterexamples.iter().find(|c| c.2 == 'c') {
                    println!(
                        "  note: {} sampled states lie in neither U0 nor T01, e.g. z1 = {z1:?}, z2 = {z2:?}; noisy arcs can leave C and D there",
                        rep.covering_failures
                    );
                }
            }
            ok &= rep.containment_ok() && rep.disjoint_ok();
        }
        if let Some(s) = &d.hand1_schedule {
            println!("  B = {:.4}, T_med = {:.6}, T_max = {:.6}", s.b, s.t_med, s.t_max);
        }
        if let Some(c) = d.nesterov_c {
            println!("  nesterov envelope c = {c:.6}");
        }
        if let Some(r) = &d.rate {
            println!("  heavy-ball rate: m = {}, psi = {:.6e}, nu = {:.6e}, decay (1-m) psi = {:.6e}", r.m, r.psi, r.nu, r.decay());
        }
        if let Some(a) = d.sc_a {
            println!("  strongly convex rate a = {a}");
        }
        if let crate::config::AlgorithmConfig::Hand2 { c, t_min, t_max } = run.algorithm {
            if let Some(mu) = obj.mu() {
                let k = Hand2Params { c, t_min, t_max }.constants(mu, obj.lipschitz_m());
                println!("  k1 = {:.6}, k0 = {:.6}, k~b = {:.6}, ka = {:.6}", k.k1, k.k0, k.kb_tilde, k.ka);
            }
        }
    }
    println!("{}", if ok { "validation passed" } else { "validation FAILED" });
    Ok(ok)
}
