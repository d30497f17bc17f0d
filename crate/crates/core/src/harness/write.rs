//! Output files of a run.

use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{Experiment, RunConfig, SchemeChoice, Series};
use super::ensemble::{CountStats, EnsembleResult, RateDip};
use crate::error::{Error, Result};
use crate::experiments::{Frame, Gap};
use crate::filters::{RecordKind, Trajectory};
use crate::output::{write_json, write_table, Table};

/// Where the max-shift statistic is measured from.
pub const SHIFT_DEFINITION: &str =
    "max over every filter step of |Re<b>_11(t) - Re(alpha_ss)|, alpha_ss = -2i beta/kappa_b";

#[derive(Debug, Clone, Serialize)]
pub struct Peak {
    pub t: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ShiftSummary {
    pub delta_beta: f64,
    pub median: f64,
    pub exceed_delta_beta_fraction: f64,
    pub gap: Option<Gap>,
    pub overflow: Option<u64>,
}

/// Acceptance-facing metrics of a run.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub n_traj: usize,
    pub successes: usize,
    pub failures: usize,
    /// Peak of `<n>_11` (ME solution or ensemble mean), single-mode runs.
    pub peak_n11: Option<Peak>,
    pub counts: Option<CountStats>,
    pub shifts: Option<ShiftSummary>,
    pub rate_dip: Option<RateDip>,
    pub audit_failures: usize,
    pub max_trace_deviation: f64,
    pub min_eigenvalue_r11: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Metadata<'a> {
    pub program: &'static str,
    pub version: &'static str,
    pub config_hash: String,
    pub seed: u64,
    pub frame: Option<Frame>,
    pub dim_b: Option<usize>,
    pub shift_definition: Option<&'static str>,
    pub parameters: &'a RunConfig,
}

fn peak(times: &[f64], values: &[f64]) -> Option<Peak> {
    times
        .iter()
        .zip(values)
        .map(|(&t, &value)| Peak { t, value })
        .max_by(|a, b| a.value.total_cmp(&b.value))
}

pub fn summarize(result: &EnsembleResult, cfg: &RunConfig) -> Summary {
    let peak_n11 = if cfg.experiment == Experiment::Kerr {
        None
    } else if let Some(me) = &result.me {
        peak(
            &me.column("t").unwrap_or_default(),
            &me.column("n11").unwrap_or_default(),
        )
    } else {
        result.mean.first().and_then(|m| peak(&result.times, m))
    };
    let shifts = result.shifts.as_ref().map(|s| ShiftSummary {
        delta_beta: s.delta_beta,
        median: s.median,
        exceed_delta_beta_fraction: s.exceed_fraction,
        gap: s.histogram.as_ref().and_then(|h| h.gap),
        overflow: s.histogram.as_ref().map(|h| h.overflow),
    });
    Summary {
        n_traj: result.n_traj,
        successes: result.successes,
        failures: result.failures.len(),
        peak_n11,
        counts: result.counts,
        shifts,
        rate_dip: result.rate_dip,
        audit_failures: result.audit_failures,
        max_trace_deviation: result.audit.max_trace_deviation,
        min_eigenvalue_r11: result
            .audit
            .min_eigenvalue_r11
            .is_finite()
            .then_some(result.audit.min_eigenvalue_r11),
    }
}

fn trajectory_table(tr: &Trajectory) -> Table {
    let mut cols = vec!["t".to_string()];
    cols.extend(tr.columns.iter().cloned());
    let mut t = Table::new(cols);
    for (k, &time) in tr.times.iter().enumerate() {
        let mut row = vec![time];
        row.extend(tr.series.iter().map(|s| s[k]));
        t.push(row);
    }
    t
}

fn record_table(tr: &Trajectory) -> Table {
    match &tr.record.kind {
        RecordKind::Homodyne { dt, dy } => {
            let mut t = Table::new(["t", "dY"]);
            let t0 = tr.times.first().copied().unwrap_or(0.0);
            for (k, &d) in dy.iter().enumerate() {
                t.push(vec![t0 + k as f64 * dt, d]);
            }
            t
        }
        RecordKind::Counts { jump_times } => {
            let mut t = Table::new(["jump_time"]);
            for &j in jump_times {
                t.push(vec![j]);
            }
            t
        }
    }
}

fn rate_table(tr: &Trajectory, name: &str) -> Table {
    let mut t = Table::new(["t", name]);
    for (&time, &r) in tr.record.rate_times.iter().zip(&tr.record.rates) {
        t.push(vec![time, r]);
    }
    t
}

/// Writes every requested output under `cfg.output_dir`; returns the paths.
pub fn write_outputs(result: &EnsembleResult, cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = vec![];
    let mut table = |stem: &str, t: &Table| -> Result<()> {
        written.push(write_table(dir, stem, t, cfg.format)?);
        Ok(())
    };

    if let Some(me) = &result.me {
        if cfg.wants(Series::Mean) {
            let stem = if cfg.experiment == Experiment::Kerr {
                "me"
            } else {
                "n11"
            };
            table(stem, me)?;
        }
    } else if cfg.wants(Series::Mean) && !result.mean.is_empty() {
        let mut cols = vec!["t".to_string()];
        for c in &result.columns {
            cols.push(format!("{c}_mean"));
            cols.push(format!("{c}_se"));
        }
        let mut t = Table::new(cols);
        for (k, &time) in result.times.iter().enumerate() {
            let mut row = vec![time];
            for (m, s) in result.mean.iter().zip(&result.stderr) {
                row.push(m[k]);
                row.push(s[k]);
            }
            t.push(row);
        }
        table("mean", &t)?;
    }

    let rate_name = if cfg.scheme == SchemeChoice::Homodyne {
        "K"
    } else {
        "nu"
    };
    for tr in &result.saved {
        let i = tr.index;
        if cfg.wants(Series::Trajectories) {
            table(&format!("trajectory_{i}"), &trajectory_table(tr))?;
        }
        if cfg.wants(Series::Records) {
            let stem = match tr.record.kind {
                RecordKind::Homodyne { .. } => format!("record_{i}"),
                RecordKind::Counts { .. } => format!("jumps_{i}"),
            };
            table(&stem, &record_table(tr))?;
        }
        if cfg.wants(Series::Rates) {
            table(&format!("rates_{i}"), &rate_table(tr, rate_name))?;
        }
    }

    if let Some(s) = &result.shifts {
        if cfg.wants(Series::Shifts) {
            let mut t = Table::new(["trajectory", "max_shift"]).with_integers(&["trajectory"]);
            for &(i, v) in &s.values {
                t.push(vec![i as f64, v]);
            }
            table("max_shifts", &t)?;
            if let Some(h) = &s.histogram {
                table("histogram", &h.to_table())?;
            }
        }
    }

    let summary = summarize(result, cfg);
    let path = dir.join("summary.json");
    write_json(&path, &summary)?;
    written.push(path);
    let path = dir.join("metadata.json");
    write_json(&path, &metadata(cfg))?;
    written.push(path);
    if !result.failures.is_empty() {
        let path = dir.join("failures.json");
        write_json(&path, &result.failures)?;
        written.push(path);
    }
    Ok(written)
}

pub fn metadata(cfg: &RunConfig) -> Metadata<'_> {
    let kerr = cfg.kerr();
    Metadata {
        program: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config_hash: cfg.content_hash(),
        seed: cfg.master_seed,
        frame: kerr.map(|k| k.resolved_frame()),
        dim_b: kerr.map(|k| k.dim_b.unwrap_or_else(|| k.required_dim_b())),
        shift_definition: kerr.map(|_| SHIFT_DEFINITION),
        parameters: cfg,
    }
}

/// Reads back a `summary.json`.
pub fn read_summary(path: &Path) -> Result<serde_json::Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}
