//! Parallel trajectory ensembles with order-independent aggregation.

use rayon::prelude::*;
use serde::Serialize;

use super::config::{Experiment, Representation, RunConfig, SchemeChoice};
use crate::embedding::{simulate_sse_trajectory, JointKet};
use crate::error::{Error, Result};
use crate::experiments::{
    build_kerr, build_single_mode, median, shift_histogram, single_mode_number, KerrSetup,
    ShiftHistogram, TrajectoryObservables, MIN_HISTOGRAM_VALUES,
};
use crate::filters::{
    simulate_trajectory, InvariantAudit, NoiseSource, Observable, Scheme, Trajectory,
    TrajectorySpec,
};
use crate::hierarchy::{closed_form_n11, integrate_me, Component, Hierarchy, SystemModel};
use crate::hilbert::{Ket, Operator};
use crate::output::Table;
use crate::pulse::Pulse;

/// Failure fraction above which an ensemble is aborted.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

/// Exact sum of doubles on a 2⁻⁶⁴ fixed-point grid, so that merging partial
/// sums in any order gives the same bits.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FixedSum(i128);

const FIXED_SCALE: f64 = 18446744073709551616.0; // 2^64

impl FixedSum {
    pub fn add(&mut self, x: f64) {
        self.0 += (x * FIXED_SCALE).round() as i128;
    }

    pub fn merge(&mut self, o: FixedSum) {
        self.0 += o.0;
    }

    pub fn value(&self) -> f64 {
        self.0 as f64 / FIXED_SCALE
    }
}

/// Per-checkpoint sums for one column.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Moments {
    sum: Vec<FixedSum>,
    sum_sq: Vec<FixedSum>,
}

impl Moments {
    fn add(&mut self, series: &[f64]) {
        if self.sum.is_empty() {
            self.sum = vec![FixedSum::default(); series.len()];
            self.sum_sq = vec![FixedSum::default(); series.len()];
        }
        for (k, &x) in series.iter().enumerate() {
            self.sum[k].add(x);
            self.sum_sq[k].add(x * x);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub index: u64,
    pub time: Option<f64>,
    pub cause: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct CountStats {
    pub zero: u64,
    pub one: u64,
    pub two_or_more: u64,
    pub fraction_one: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftStats {
    pub delta_beta: f64,
    /// Max shift per successful trajectory, in index order.
    pub values: Vec<(u64, f64)>,
    /// Needs at least [`crate::experiments::MIN_HISTOGRAM_VALUES`] values.
    pub histogram: Option<ShiftHistogram>,
    pub exceed_fraction: f64,
    pub median: f64,
}

/// Smallest detection rate seen on the no-click part of each trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateDip {
    pub min_nu: f64,
    pub at: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnsembleResult {
    pub n_traj: usize,
    pub successes: usize,
    pub failures: Vec<Failure>,
    pub times: Vec<f64>,
    /// Observable names followed by the rate column.
    pub columns: Vec<String>,
    /// `mean[c][k]`: mean of column `c` at checkpoint `k`. Empty when
    /// trajectories stop at their first click.
    pub mean: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<f64>>,
    pub counts: Option<CountStats>,
    pub shifts: Option<ShiftStats>,
    /// Deepest no-click rate dip over the ensemble (photodetection).
    pub rate_dip: Option<RateDip>,
    pub audit: InvariantAudit,
    /// Trajectories whose own audit missed a threshold.
    pub audit_failures: usize,
    /// The unconditional solution, for `unconditional` runs.
    pub me: Option<Table>,
    /// The first `saved_trajectories` trajectories, kept whole.
    #[serde(skip)]
    pub saved: Vec<Trajectory>,
}

/// Model, pulse, initial state and sampled observables of a configuration.
pub struct Prepared {
    pub model: SystemModel,
    pub pulse: Pulse,
    pub h0: Hierarchy,
    pub observables: Vec<Observable>,
    pub kerr: Option<KerrSetup>,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    match cfg.experiment {
        Experiment::Kerr => {
            let s = cfg
                .kerr()
                .ok_or_else(|| Error::Internal("kerr parameters missing".into()))?;
            let setup = build_kerr(&s)?;
            let observables = setup.trajectory_spec(1.0, 1.0, 1).observables;
            Ok(Prepared {
                model: setup.model.clone(),
                pulse: setup.pulse.clone(),
                h0: setup.h0.clone(),
                observables,
                kerr: Some(setup),
            })
        }
        Experiment::SingleMode | Experiment::MeOnly => {
            let s = cfg.single_mode();
            let (model, mut pulse, h0) = build_single_mode(&s)?;
            if let Some(p) = &cfg.pulse_file {
                pulse = Pulse::from_csv_path(p)?;
            }
            Ok(Prepared {
                model,
                pulse,
                h0,
                observables: vec![Observable::re("n11", single_mode_number(&s))],
                kerr: None,
            })
        }
    }
}

fn scheme(cfg: &RunConfig) -> Option<Scheme> {
    match cfg.scheme {
        SchemeChoice::Homodyne => Some(Scheme::Homodyne),
        SchemeChoice::Photodetect => Some(Scheme::Photodetect),
        SchemeChoice::Unconditional => None,
    }
}

/// One trajectory of `cfg`, index `i` of the ensemble.
pub fn run_trajectory(cfg: &RunConfig, p: &Prepared, i: u64) -> Result<Trajectory> {
    let scheme = scheme(cfg)
        .ok_or_else(|| Error::validation("scheme", "unconditional runs have no trajectories"))?;
    let mut spec = TrajectorySpec::new(cfg.t_end, cfg.dt, cfg.sample_stride);
    spec.observables = p.observables.clone();
    spec.stop_after_jump = cfg.stop_after_jump;
    let mut noise = NoiseSource::new(cfg.master_seed, i);
    match cfg.representation {
        Representation::Sme => {
            simulate_trajectory(&p.model, &p.pulse, scheme, &p.h0, &spec, &mut noise)
        }
        Representation::Sse => {
            let vac = Ket::vacuum(p.model.dim());
            let jk = JointKet::excited(&vac, p.model.layout())?;
            simulate_sse_trajectory(&p.model, &p.pulse, scheme, &jk, &spec, &mut noise)
        }
    }
}

fn me_table(cfg: &RunConfig, p: &Prepared) -> Result<Table> {
    let names: Vec<String> = p.observables.iter().map(|o| o.name.clone()).collect();
    let single_exp = p.kerr.is_none() && cfg.pulse_file.is_none();
    let mut cols = vec!["t".to_string()];
    cols.extend(names.iter().cloned());
    if single_exp {
        cols.push("closed_form".into());
    }
    let mut table = Table::new(cols);
    let ops: Vec<&Operator> = p.observables.iter().map(|o| &o.op).collect();
    let mut err = None;
    integrate_me(
        &p.model,
        &p.pulse,
        &p.h0,
        cfg.t_end,
        cfg.dt,
        cfg.sample_stride,
        |h| {
            let mut row = vec![h.t];
            for (o, op) in p.observables.iter().zip(&ops) {
                row.push(o.pick(h.expect(Component::C11, op)));
            }
            if single_exp {
                row.push(closed_form_n11(cfg.gamma, cfg.kappa_a, h.t, cfg.t0));
            }
            if row.iter().any(|v| !v.is_finite()) && err.is_none() {
                err = Some(Error::Instability(format!(
                    "non-finite ME observable at t = {}",
                    h.t
                )));
            }
            table.push(row);
        },
    )?;
    err.map_or(Ok(table), Err)
}

/// Everything the aggregator keeps from one trajectory.
struct Outcome {
    index: u64,
    series: Vec<Vec<f64>>,
    times: Vec<f64>,
    counts: usize,
    shift: Option<f64>,
    dip: Option<RateDip>,
    audit: InvariantAudit,
    stopped: bool,
    whole: Option<Trajectory>,
}

fn rate_dip(tr: &Trajectory) -> Option<RateDip> {
    let nu = tr.column("nu")?;
    let until = tr
        .record
        .jump_times()
        .first()
        .copied()
        .unwrap_or(f64::INFINITY);
    tr.times
        .iter()
        .zip(nu)
        .skip(1)
        .filter(|(&t, _)| t < until)
        .map(|(&t, &v)| RateDip { min_nu: v, at: t })
        .min_by(|a, b| a.min_nu.total_cmp(&b.min_nu))
}

fn outcome(cfg: &RunConfig, p: &Prepared, i: u64) -> Result<Outcome> {
    let tr = run_trajectory(cfg, p, i)?;
    let shift = match &p.kerr {
        Some(k) => Some(TrajectoryObservables::from_trajectory(&tr, k.x_b_reference())?.max_shift),
        None => None,
    };
    Ok(Outcome {
        index: i,
        series: tr.series.clone(),
        times: tr.times.clone(),
        counts: tr.counts(),
        shift,
        dip: rate_dip(&tr),
        audit: tr.audit,
        stopped: tr.stopped_at.is_some(),
        whole: ((i as usize) < cfg.saved_trajectories).then_some(tr),
    })
}

fn failure(i: u64, e: Error) -> Failure {
    let time = match &e {
        Error::AtTime { t, .. } => Some(*t),
        _ => None,
    };
    Failure {
        index: i,
        time,
        cause: e.to_string(),
    }
}

/// Runs `cfg`. Trajectory `i` draws from stream `(master_seed, i)` and the
/// aggregation is exact, so the result does not depend on the worker count.
pub fn run_ensemble(cfg: &RunConfig) -> Result<EnsembleResult> {
    let p = prepare(cfg)?;
    if scheme(cfg).is_none() {
        let table = me_table(cfg, &p)?;
        return Ok(EnsembleResult {
            n_traj: 1,
            successes: 1,
            failures: vec![],
            times: table.rows.iter().map(|r| r[0]).collect(),
            columns: vec![],
            mean: vec![],
            stderr: vec![],
            counts: None,
            shifts: None,
            rate_dip: None,
            audit: InvariantAudit::default(),
            audit_failures: 0,
            me: Some(table),
            saved: vec![],
        });
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
    log::info!("running {} trajectories", cfg.n_traj);
    let results: Vec<std::result::Result<Outcome, Failure>> = pool.install(|| {
        (0..cfg.n_traj as u64)
            .into_par_iter()
            .map(|i| outcome(cfg, &p, i).map_err(|e| failure(i, e)))
            .collect()
    });
    aggregate(cfg, &p, results)
}

fn aggregate(
    cfg: &RunConfig,
    p: &Prepared,
    results: Vec<std::result::Result<Outcome, Failure>>,
) -> Result<EnsembleResult> {
    let n_traj = results.len();
    let mut failures = vec![];
    let mut ok = vec![];
    for r in results {
        match r {
            Ok(o) => ok.push(o),
            Err(f) => {
                log::warn!("trajectory {} failed: {}", f.index, f.cause);
                failures.push(f)
            }
        }
    }
    if failures.len() as f64 > MAX_FAILURE_FRACTION * n_traj as f64 {
        return Err(Error::EnsembleAborted {
            failed: failures.len(),
            total: n_traj,
            first: failures[0].cause.clone(),
        });
    }
    let mut columns: Vec<String> = p.observables.iter().map(|o| o.name.clone()).collect();
    columns.push(
        if cfg.scheme == SchemeChoice::Homodyne {
            "K"
        } else {
            "nu"
        }
        .into(),
    );

    let mut audit = InvariantAudit::default();
    let mut audit_failures = 0;
    let mut moments = vec![Moments::default(); columns.len()];
    let mut times = vec![];
    let full_series = !ok.iter().any(|o| o.stopped);
    let mut hist = [0u64; 3];
    let mut shifts = vec![];
    let mut dip: Option<RateDip> = None;
    let mut saved = vec![];
    for o in ok.iter_mut() {
        audit.merge(&o.audit);
        if !o.audit.passes() {
            audit_failures += 1;
        }
        if full_series {
            if times.is_empty() {
                times = o.times.clone();
            }
            for (m, s) in moments.iter_mut().zip(&o.series) {
                m.add(s);
            }
        }
        hist[o.counts.min(2)] += 1;
        if let Some(s) = o.shift {
            shifts.push((o.index, s));
        }
        if let Some(d) = o.dip {
            if dip.is_none_or(|best| d.min_nu < best.min_nu) {
                dip = Some(d);
            }
        }
        if let Some(tr) = o.whole.take() {
            saved.push(tr);
        }
    }
    let n = ok.len();
    let (mean, stderr) = if full_series && n > 0 {
        let nf = n as f64;
        let mean: Vec<Vec<f64>> = moments
            .iter()
            .map(|m| m.sum.iter().map(|s| s.value() / nf).collect())
            .collect();
        let stderr = moments
            .iter()
            .zip(&mean)
            .map(|(m, mu)| {
                m.sum_sq
                    .iter()
                    .zip(mu)
                    .map(|(s2, mu)| {
                        if n < 2 {
                            return 0.0;
                        }
                        let var = ((s2.value() - nf * mu * mu) / (nf - 1.0)).max(0.0);
                        (var / nf).sqrt()
                    })
                    .collect()
            })
            .collect();
        (mean, stderr)
    } else {
        (vec![], vec![])
    };
    let counts = (cfg.scheme == SchemeChoice::Photodetect).then(|| CountStats {
        zero: hist[0],
        one: hist[1],
        two_or_more: hist[2],
        fraction_one: if n > 0 {
            hist[1] as f64 / n as f64
        } else {
            0.0
        },
    });
    let shifts = match &p.kerr {
        Some(k) if !shifts.is_empty() => {
            let values: Vec<f64> = shifts.iter().map(|s| s.1).collect();
            let histogram = if values.len() >= MIN_HISTOGRAM_VALUES {
                Some(shift_histogram(&values, cfg.hist_bin_width, cfg.hist_bins)?)
            } else {
                log::warn!(
                    "{} trajectories are too few for a shift histogram",
                    values.len()
                );
                None
            };
            let db = k.scenario.delta_beta();
            let exceed = values.iter().filter(|&&v| v > db).count() as f64 / values.len() as f64;
            Some(ShiftStats {
                delta_beta: db,
                median: median(&values),
                values: shifts,
                histogram,
                exceed_fraction: exceed,
            })
        }
        _ => None,
    };
    Ok(EnsembleResult {
        n_traj,
        successes: n,
        failures,
        times,
        columns,
        mean,
        stderr,
        counts,
        shifts,
        rate_dip: dip,
        audit,
        audit_failures,
        me: None,
        saved,
    })
}
