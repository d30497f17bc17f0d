//! Conditional hierarchy dynamics under homodyne or photon-counting
//! monitoring of the single-photon channel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::engine::{checked_k, checked_nu, is_active, C00, C01, C11};
use crate::hierarchy::{Engine, Hierarchy, SystemModel};
use crate::hilbert::{
    check_dims, hermiticity_residue, max_abs_diff, min_eigenvalue, CMatrix, Operator, C64,
};
use crate::kernel::{adjoint_into, axpy, scale, trace, SparseOp};
use crate::pulse::Pulse;

/// Jump probabilities per step at or above this are rejected.
pub const MAX_JUMP_PROBABILITY: f64 = 0.1;
/// Below this pre-normalization trace the step is considered unstable.
const MIN_TRACE: f64 = 0.5;
/// Remaining wavepacket weight below which the photon counts as fully emitted.
const WEIGHT_FLOOR: f64 = 1e-12;

/// Per-trajectory random stream: ChaCha8 keyed by the master seed, with the
/// trajectory index selecting the stream.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    rng: ChaCha8Rng,
    seed: u64,
    index: u64,
}

impl NoiseSource {
    pub fn new(master_seed: u64, index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(index);
        Self {
            rng,
            seed: master_seed,
            index,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Homodyne,
    Photodetect,
}

impl Scheme {
    pub fn rate_name(self) -> &'static str {
        match self {
            Scheme::Homodyne => "K",
            Scheme::Photodetect => "nu",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RecordKind {
    Homodyne { dt: f64, dy: Vec<f64> },
    Counts { jump_times: Vec<f64> },
}

/// Measurement outcomes plus the rate (`K` or `ν`) at the sample times.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasurementRecord {
    pub kind: RecordKind,
    pub rate_times: Vec<f64>,
    pub rates: Vec<f64>,
}

impl MeasurementRecord {
    fn new(scheme: Scheme, dt: f64) -> Self {
        let kind = match scheme {
            Scheme::Homodyne => RecordKind::Homodyne { dt, dy: Vec::new() },
            Scheme::Photodetect => RecordKind::Counts {
                jump_times: Vec::new(),
            },
        };
        Self {
            kind,
            rate_times: Vec::new(),
            rates: Vec::new(),
        }
    }

    pub fn jump_times(&self) -> &[f64] {
        match &self.kind {
            RecordKind::Counts { jump_times } => jump_times,
            RecordKind::Homodyne { .. } => &[],
        }
    }

    pub fn dy(&self) -> &[f64] {
        match &self.kind {
            RecordKind::Homodyne { dy, .. } => dy,
            RecordKind::Counts { .. } => &[],
        }
    }
}

/// `K = tr[(L+L†)ρ11 + ρ01 ξ + ρ10 ξ*]`.
pub fn k_rate(h: &Hierarchy, l: &Operator, xi: C64) -> Result<f64> {
    check_dims(h.dim(), l.dim())?;
    let lm = l.matrix();
    let raw =
        ((lm + lm.adjoint()) * &h.r11).trace() + h.r01.trace() * xi + h.r10.trace() * xi.conj();
    checked_k(raw)
}

/// `ν = tr[L†Lρ11 + Lρ10 ξ* + L†ρ01 ξ + ρ00 |ξ|²]`, clamped at 0 from rounding.
pub fn nu_rate(h: &Hierarchy, l: &Operator, xi: C64) -> Result<f64> {
    check_dims(h.dim(), l.dim())?;
    let lm = l.matrix();
    let ld = lm.adjoint();
    let raw = (&ld * lm * &h.r11).trace()
        + (lm * &h.r10).trace() * xi.conj()
        + (&ld * &h.r01).trace() * xi
        + h.r00.trace() * xi.norm_sqr();
    checked_nu(raw)
}

/// How a photodetection step decides whether a click occurs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Draw {
    /// Click iff `u < ν dt`.
    Uniform(f64),
    /// Prescribed outcome (conditioning on a given record).
    Force(bool),
}

/// Outcome of one conditional step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepResult {
    pub jumped: bool,
    /// Homodyne record increment (0 for photodetection).
    pub dy: f64,
    /// `K` or `ν` at the start of the step.
    pub rate: f64,
    /// `tr ρ11` (or `‖ψ‖²`) before renormalization, for updates that
    /// conserve it analytically (the no-detection branch).
    pub norm_before: Option<f64>,
}

/// Reusable stepper for the conditional hierarchy.
pub struct SmeFilter<'a> {
    model: &'a SystemModel,
    pulse: &'a Pulse,
    engine: Engine,
    h: Hierarchy,
}

impl<'a> SmeFilter<'a> {
    pub fn new(model: &'a SystemModel, pulse: &'a Pulse, h0: Hierarchy) -> Result<Self> {
        check_dims(h0.dim(), model.dim())?;
        Ok(Self {
            model,
            pulse,
            engine: Engine::new(model),
            h: h0,
        })
    }

    pub fn state(&self) -> &Hierarchy {
        &self.h
    }

    pub fn into_state(self) -> Hierarchy {
        self.h
    }

    fn prepare(&mut self) -> Result<(C64, bool)> {
        let t = self.h.t;
        let xi = self.pulse.xi(t);
        let active = is_active(&self.h);
        self.engine.assemble(self.model, t, &self.h.r11)?;
        self.engine.drift(self.model, xi, &self.h, active);
        Ok((xi, active))
    }

    /// Current `ν` (photodetection) or `K` (homodyne).
    pub fn rate(&mut self, scheme: Scheme) -> Result<f64> {
        match scheme {
            Scheme::Photodetect => {
                let (xi, _) = self.prepare()?;
                self.engine.nu(self.model, xi, &self.h)
            }
            Scheme::Homodyne => self
                .engine
                .k_value(self.model, self.pulse.xi(self.h.t), &self.h),
        }
    }

    /// Diffusive step with Wiener increment `dw` (Kraus form of the
    /// Euler–Maruyama update; see [`crate::hierarchy`] for the drift).
    pub fn step_homodyne(&mut self, dt: f64, dw: f64) -> Result<StepResult> {
        check_dt(dt)?;
        let t = self.h.t;
        let xi = self.pulse.xi(t);
        let active = is_active(&self.h);
        self.engine.assemble(self.model, t, &self.h.r11)?;
        let k = self.engine.k_value(self.model, xi, &self.h)?;
        let dy = k * dt + dw;
        let r2 = self.pulse.xi_over_sqrt_w(t).norm_sqr();
        let (w0, w1) = (self.pulse.w(t), self.pulse.w(t + dt));
        let q = if w0 > WEIGHT_FLOOR && w1 > WEIGHT_FLOOR {
            w0 / w1
        } else {
            1.0
        };
        self.engine
            .kraus_homodyne(self.model, xi, r2, q, &mut self.h, dt, dy, active);
        self.finish(t + dt, active)?;
        Ok(StepResult {
            jumped: false,
            dy,
            rate: k,
            norm_before: None,
        })
    }

    /// Jump/no-jump step; the jump probability is `ν dt` at the step start
    /// and the no-detection branch is integrated with RK4.
    pub fn step_photodetect(&mut self, dt: f64, draw: Draw) -> Result<StepResult> {
        check_dt(dt)?;
        let t = self.h.t;
        let (xi, active) = self.prepare()?;
        let nu = self.engine.nu(self.model, xi, &self.h)?;
        let p = nu * dt;
        if p >= MAX_JUMP_PROBABILITY {
            return Err(Error::StepSize(format!(
                "jump probability ν·dt = {p:.3} must stay below {MAX_JUMP_PROBABILITY}"
            )));
        }
        let jumped = match draw {
            Draw::Uniform(u) => u < p,
            Draw::Force(j) => j,
        };
        self.engine.jump_maps(xi, &self.h, active);
        if jumped {
            let e = &self.engine;
            if nu <= 0.0 {
                return Err(Error::ImpossibleJump);
            }
            let inv = C64::new(1.0 / nu, 0.0);
            for (r, j) in [
                (&mut self.h.r11, &e.j[C11]),
                (&mut self.h.r01, &e.j[C01]),
                (&mut self.h.r00, &e.j[C00]),
            ] {
                r.fill(C64::new(0.0, 0.0));
                axpy(r, inv, j);
            }
        } else {
            self.engine
                .no_jump_rk4(self.model, self.pulse, &mut self.h, dt, nu)?;
        }
        let norm = self.finish(t + dt, active || jumped)?;
        Ok(StepResult {
            jumped,
            dy: 0.0,
            rate: nu,
            norm_before: (!jumped).then_some(norm),
        })
    }

    /// Joint renormalization by `tr ρ11`; returns the trace before it.
    fn finish(&mut self, t: f64, touched_cross: bool) -> Result<f64> {
        let tr = trace(&self.h.r11).re;
        if !(tr >= MIN_TRACE) {
            return Err(Error::Instability(format!(
                "tr ρ11 = {tr:.4} before renormalization; reduce dt"
            )));
        }
        let inv = 1.0 / tr;
        scale(&mut self.h.r11, inv);
        if touched_cross {
            scale(&mut self.h.r01, inv);
            scale(&mut self.h.r00, inv);
            adjoint_into(&mut self.h.r10, &self.h.r01);
        }
        self.h.t = t;
        Ok(tr)
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::validation("dt", "must be positive"))
    }
}

/// One homodyne step; returns the new state and the record increment `dY`.
pub fn sme_homodyne_step(
    model: &SystemModel,
    pulse: &Pulse,
    h: &Hierarchy,
    dt: f64,
    noise: &mut NoiseSource,
) -> Result<(Hierarchy, f64)> {
    let mut f = SmeFilter::new(model, pulse, h.clone())?;
    let dw = dt.sqrt() * noise.normal();
    let r = f.step_homodyne(dt, dw)?;
    Ok((f.into_state(), r.dy))
}

/// One photodetection step; returns the new state and whether a click occurred.
pub fn sme_photodetect_step(
    model: &SystemModel,
    pulse: &Pulse,
    h: &Hierarchy,
    dt: f64,
    noise: &mut NoiseSource,
) -> Result<(Hierarchy, bool)> {
    let mut f = SmeFilter::new(model, pulse, h.clone())?;
    let r = f.step_photodetect(dt, Draw::Uniform(noise.uniform()))?;
    Ok((f.into_state(), r.jumped))
}

/// Photodetection step with a prescribed outcome.
pub fn sme_photodetect_step_forced(
    model: &SystemModel,
    pulse: &Pulse,
    h: &Hierarchy,
    dt: f64,
    jump: bool,
) -> Result<Hierarchy> {
    let mut f = SmeFilter::new(model, pulse, h.clone())?;
    f.step_photodetect(dt, Draw::Force(jump))?;
    Ok(f.into_state())
}

/// Real or imaginary part of an expectation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Part {
    Re,
    Im,
}

/// Named observable sampled as `Re/Im tr[ρ11 op]`.
#[derive(Debug, Clone)]
pub struct Observable {
    pub name: String,
    pub op: Operator,
    pub part: Part,
}

impl Observable {
    pub fn re(name: impl Into<String>, op: Operator) -> Self {
        Self {
            name: name.into(),
            op,
            part: Part::Re,
        }
    }

    pub fn im(name: impl Into<String>, op: Operator) -> Self {
        Self {
            name: name.into(),
            op,
            part: Part::Im,
        }
    }

    pub fn pick(&self, z: C64) -> f64 {
        match self.part {
            Part::Re => z.re,
            Part::Im => z.im,
        }
    }
}

/// Fixed-grid trajectory settings.
#[derive(Debug, Clone)]
pub struct TrajectorySpec {
    pub t_end: f64,
    pub dt: f64,
    /// Observables are stored every `stride` steps.
    pub stride: usize,
    pub observables: Vec<Observable>,
    /// Keep the per-step homodyne record.
    pub keep_record: bool,
    /// End the run at the first click (the remaining evolution is then
    /// deterministic and not needed by the caller).
    pub stop_after_jump: bool,
    /// Forbid clicks: conditions on the no-count record.
    pub suppress_jumps: bool,
}

impl TrajectorySpec {
    pub fn new(t_end: f64, dt: f64, stride: usize) -> Self {
        Self {
            t_end,
            dt,
            stride,
            observables: Vec::new(),
            keep_record: true,
            stop_after_jump: false,
            suppress_jumps: false,
        }
    }

    pub fn observe(mut self, obs: Observable) -> Self {
        self.observables.push(obs);
        self
    }

    pub fn steps(&self) -> Result<usize> {
        if !(self.dt > 0.0) || !self.t_end.is_finite() {
            return Err(Error::validation("dt", "must be positive"));
        }
        if self.stride == 0 {
            return Err(Error::validation("sample_stride", "must be at least 1"));
        }
        Ok((self.t_end / self.dt).round().max(0.0) as usize)
    }
}

/// Running extremes of the structural invariants along a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InvariantAudit {
    pub steps: u64,
    pub max_trace_deviation: f64,
    pub max_hermiticity_r11: f64,
    pub max_hermiticity_r00: f64,
    pub max_pairing: f64,
    /// Smallest eigenvalue of `ρ11`, checked at the sample points.
    pub min_eigenvalue_r11: f64,
    /// Largest `|tr ρ11 − 1|` before renormalization, per step.
    pub max_prenorm_drift: f64,
}

impl Default for InvariantAudit {
    fn default() -> Self {
        Self {
            steps: 0,
            max_trace_deviation: 0.0,
            max_hermiticity_r11: 0.0,
            max_hermiticity_r00: 0.0,
            max_pairing: 0.0,
            min_eigenvalue_r11: f64::INFINITY,
            max_prenorm_drift: 0.0,
        }
    }
}

impl InvariantAudit {
    pub fn record_step(&mut self, h: &Hierarchy, norm_before: Option<f64>) {
        self.steps += 1;
        self.max_trace_deviation = self.max_trace_deviation.max((trace(&h.r11).re - 1.0).abs());
        self.max_hermiticity_r11 = self.max_hermiticity_r11.max(hermiticity_residue(&h.r11));
        self.max_hermiticity_r00 = self.max_hermiticity_r00.max(hermiticity_residue(&h.r00));
        self.max_pairing = self.max_pairing.max(max_abs_diff(&h.r10, &h.r01.adjoint()));
        if let Some(n) = norm_before {
            self.max_prenorm_drift = self.max_prenorm_drift.max((n - 1.0).abs());
        }
    }

    /// Pure-state steps: only the norm is meaningful.
    pub fn record_norm(&mut self, norm_sqr: f64) {
        self.steps += 1;
        self.max_trace_deviation = self.max_trace_deviation.max((norm_sqr - 1.0).abs());
    }

    pub fn record_spectrum(&mut self, r11: &CMatrix) {
        self.min_eigenvalue_r11 = self.min_eigenvalue_r11.min(min_eigenvalue(r11));
    }

    pub fn merge(&mut self, o: &InvariantAudit) {
        self.steps += o.steps;
        self.max_trace_deviation = self.max_trace_deviation.max(o.max_trace_deviation);
        self.max_hermiticity_r11 = self.max_hermiticity_r11.max(o.max_hermiticity_r11);
        self.max_hermiticity_r00 = self.max_hermiticity_r00.max(o.max_hermiticity_r00);
        self.max_pairing = self.max_pairing.max(o.max_pairing);
        self.min_eigenvalue_r11 = self.min_eigenvalue_r11.min(o.min_eigenvalue_r11);
        self.max_prenorm_drift = self.max_prenorm_drift.max(o.max_prenorm_drift);
    }

    /// The per-trajectory invariant thresholds.
    pub fn passes(&self) -> bool {
        self.max_trace_deviation < 1e-12
            && self.max_hermiticity_r11 < 1e-10
            && self.max_hermiticity_r00 < 1e-10
            && self.max_pairing < 1e-10
            && self.min_eigenvalue_r11 >= -1e-8
    }
}

/// Sampled observables and the measurement record of one trajectory.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Observable names followed by the rate column (`K` or `nu`).
    pub columns: Vec<String>,
    /// One series per column.
    pub series: Vec<Vec<f64>>,
    /// Minimum and maximum of each observable over every step.
    pub extremes: Vec<(f64, f64)>,
    pub record: MeasurementRecord,
    pub audit: InvariantAudit,
    pub seed: u64,
    pub index: u64,
    /// Set when the run ended at the first click.
    pub stopped_at: Option<f64>,
}

impl Trajectory {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(&self.series[k])
    }

    pub fn counts(&self) -> usize {
        self.record.jump_times().len()
    }

    pub fn to_table(&self) -> crate::output::Table {
        let mut cols = vec!["t".to_string()];
        cols.extend(self.columns.iter().cloned());
        let mut table = crate::output::Table::new(cols);
        for (k, &t) in self.times.iter().enumerate() {
            let mut row = vec![t];
            row.extend(self.series.iter().map(|s| s[k]));
            table.push(row);
        }
        table
    }
}

/// A conditional state that can be advanced and observed.
pub(crate) trait Conditional {
    fn time(&self) -> f64;
    fn step(&mut self, scheme: Scheme, dt: f64, draw: StepDraw) -> Result<StepResult>;
    /// `tr[ρ11 op]`.
    fn observe(&self, op: &SparseOp) -> C64;
    fn rate(&mut self, scheme: Scheme) -> Result<f64>;
    fn audit_step(&self, audit: &mut InvariantAudit, r: &StepResult);
    fn audit_sample(&self, audit: &mut InvariantAudit);
}

/// Random input for one step.
#[derive(Debug, Clone, Copy)]
pub(crate) enum StepDraw {
    Wiener(f64),
    Jump(Draw),
}

impl Conditional for SmeFilter<'_> {
    fn time(&self) -> f64 {
        self.h.t
    }

    fn step(&mut self, scheme: Scheme, dt: f64, draw: StepDraw) -> Result<StepResult> {
        match (scheme, draw) {
            (Scheme::Homodyne, StepDraw::Wiener(dw)) => self.step_homodyne(dt, dw),
            (Scheme::Photodetect, StepDraw::Jump(d)) => self.step_photodetect(dt, d),
            _ => Err(Error::Internal("draw does not match the scheme".into())),
        }
    }

    fn observe(&self, op: &SparseOp) -> C64 {
        op.trace_mul(&self.h.r11)
    }

    fn rate(&mut self, scheme: Scheme) -> Result<f64> {
        SmeFilter::rate(self, scheme)
    }

    fn audit_step(&self, audit: &mut InvariantAudit, r: &StepResult) {
        audit.record_step(&self.h, r.norm_before);
    }

    fn audit_sample(&self, audit: &mut InvariantAudit) {
        audit.record_spectrum(&self.h.r11);
    }
}

/// Drives a conditional state over the fixed grid of `spec`.
pub(crate) fn run_conditional<C: Conditional>(
    state: &mut C,
    scheme: Scheme,
    spec: &TrajectorySpec,
    noise: &mut NoiseSource,
) -> Result<Trajectory> {
    let steps = spec.steps()?;
    let dt = spec.dt;
    let t0 = state.time();
    let ops: Vec<SparseOp> = spec
        .observables
        .iter()
        .map(|o| SparseOp::from_operator(&o.op))
        .collect();
    let n_obs = ops.len();
    let mut columns: Vec<String> = spec.observables.iter().map(|o| o.name.clone()).collect();
    columns.push(scheme.rate_name().to_string());
    let n_samples = steps / spec.stride + 1;
    let mut series: Vec<Vec<f64>> = (0..=n_obs).map(|_| Vec::with_capacity(n_samples)).collect();
    let mut times = Vec::with_capacity(n_samples);
    let mut extremes = vec![(f64::INFINITY, f64::NEG_INFINITY); n_obs];
    let mut record = MeasurementRecord::new(scheme, dt);
    let mut audit = InvariantAudit::default();
    let mut stopped_at = None;

    let observe_all = |state: &C, extremes: &mut Vec<(f64, f64)>| -> Vec<f64> {
        ops.iter()
            .zip(&spec.observables)
            .zip(extremes.iter_mut())
            .map(|((op, o), ext)| {
                let v = o.pick(state.observe(op));
                ext.0 = ext.0.min(v);
                ext.1 = ext.1.max(v);
                v
            })
            .collect()
    };

    let mut sample = |t: f64,
                      state: &mut C,
                      extremes: &mut Vec<(f64, f64)>,
                      audit: &mut InvariantAudit,
                      record: &mut MeasurementRecord|
     -> Result<()> {
        let vals = observe_all(state, extremes);
        let rate = state.rate(scheme)?;
        times.push(t);
        for (s, v) in series.iter_mut().zip(vals) {
            s.push(v);
        }
        series[n_obs].push(rate);
        record.rate_times.push(t);
        record.rates.push(rate);
        state.audit_sample(audit);
        Ok(())
    };

    sample(t0, state, &mut extremes, &mut audit, &mut record).map_err(|e| e.at_time(t0))?;
    for k in 1..=steps {
        let draw = match scheme {
            Scheme::Homodyne => StepDraw::Wiener(dt.sqrt() * noise.normal()),
            Scheme::Photodetect => {
                let u = noise.uniform();
                StepDraw::Jump(if spec.suppress_jumps {
                    Draw::Force(false)
                } else {
                    Draw::Uniform(u)
                })
            }
        };
        let t_start = state.time();
        let r = state
            .step(scheme, dt, draw)
            .map_err(|e| e.at_time(t_start))?;
        state.audit_step(&mut audit, &r);
        let t = t0 + k as f64 * dt;
        match &mut record.kind {
            RecordKind::Homodyne { dy, .. } if spec.keep_record => dy.push(r.dy),
            RecordKind::Counts { jump_times } if r.jumped => jump_times.push(t),
            _ => {}
        }
        if k % spec.stride == 0 || (r.jumped && spec.stop_after_jump) {
            sample(t, state, &mut extremes, &mut audit, &mut record).map_err(|e| e.at_time(t))?;
        } else if n_obs > 0 {
            observe_all(state, &mut extremes);
        }
        if r.jumped && spec.stop_after_jump {
            stopped_at = Some(t);
            break;
        }
    }
    Ok(Trajectory {
        times,
        columns,
        series,
        extremes,
        record,
        audit,
        seed: noise.seed(),
        index: noise.index(),
        stopped_at,
    })
}

/// Simulates one conditional trajectory of the hierarchy.
pub fn simulate_trajectory(
    model: &SystemModel,
    pulse: &Pulse,
    scheme: Scheme,
    h0: &Hierarchy,
    spec: &TrajectorySpec,
    noise: &mut NoiseSource,
) -> Result<Trajectory> {
    let mut f = SmeFilter::new(model, pulse, h0.clone())?;
    run_conditional(&mut f, scheme, spec, noise)
}
