//! Scenario builders: the single-mode cavity and the two-mode Kerr cavity
//! whose second mode reads out the photon through cross-phase modulation.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{Draw, Observable, SmeFilter, Trajectory, TrajectorySpec};
use crate::hierarchy::{initial_hierarchy, Coefficient, FeedbackFn, Hierarchy, SystemModel};
use crate::hilbert::{
    coherent_dim_required, coherent_ket, embed, ladder_ops, number_op, CMatrix, DensityOp, Ket,
    ModeLayout, Operator, Slot, C64,
};
use crate::hilbert::{wigner, WignerGrid};
use crate::pulse::Pulse;

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::validation(
            field,
            format!("must be positive, got {v}"),
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingleModeScenario {
    pub gamma: f64,
    pub kappa: f64,
    pub dim_a: usize,
    pub t0: f64,
}

impl SingleModeScenario {
    pub fn new(gamma: f64, kappa: f64) -> Self {
        Self {
            gamma,
            kappa,
            dim_a: 3,
            t0: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        positive("gamma", self.gamma)?;
        positive("kappa", self.kappa)?;
        if self.dim_a < 2 {
            return Err(Error::validation("dim_a", "must be at least 2"));
        }
        if !self.t0.is_finite() {
            return Err(Error::validation("t0", "must be finite"));
        }
        Ok(())
    }
}

/// `H = 0`, `L = √κ a`, exponential photon, empty cavity.
pub fn build_single_mode(s: &SingleModeScenario) -> Result<(SystemModel, Pulse, Hierarchy)> {
    s.validate()?;
    let layout = ModeLayout::single(s.dim_a)?;
    let (a, _) = ladder_ops(s.dim_a)?;
    let model = SystemModel::builder(layout)
        .monitored(&a * s.kappa.sqrt())
        .build()?;
    let pulse = Pulse::exponential(s.gamma, s.t0)?;
    let h0 = initial_hierarchy(&DensityOp::vacuum(s.dim_a))?;
    Ok((model, pulse, h0))
}

/// Scalar conditional moments of the single-mode cavity.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSeries {
    pub times: Vec<f64>,
    /// `⟨n⟩11`
    pub n11: Vec<f64>,
    /// `⟨a⟩01`
    pub a01: Vec<C64>,
    /// `⟨1⟩00`
    pub e00: Vec<f64>,
    /// `⟨n⟩00`
    pub n00: Vec<f64>,
    pub nu: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Moments {
    n: f64,
    a: C64,
    e: f64,
    m: f64,
}

impl Moments {
    fn nu(&self, kappa: f64, xi: C64) -> f64 {
        let sk = kappa.sqrt();
        kappa * self.n + 2.0 * sk * (self.a * xi.conj()).re + self.e * xi.norm_sqr()
    }

    /// Normalized no-detection derivative: drift − jump map + ν·(moment).
    fn no_jump_rate(&self, kappa: f64, xi: C64) -> Moments {
        let sk = kappa.sqrt();
        let nu = self.nu(kappa, xi);
        let x2 = xi.norm_sqr();
        Moments {
            n: -kappa * self.n - 2.0 * sk * (self.a * xi.conj()).re - x2 * self.m + nu * self.n,
            a: -0.5 * kappa * self.a - sk * xi * self.e - sk * xi * self.m + nu * self.a,
            e: -kappa * self.m + nu * self.e,
            m: -kappa * self.m + nu * self.m,
        }
    }

    fn jump(&self, kappa: f64, xi: C64) -> Moments {
        let nu = self.nu(kappa, xi);
        Moments {
            n: self.m * xi.norm_sqr() / nu,
            a: kappa.sqrt() * self.m * xi / nu,
            e: kappa * self.m / nu,
            m: 0.0,
        }
    }

    fn axpy(&self, c: f64, d: &Moments) -> Moments {
        Moments {
            n: self.n + c * d.n,
            a: self.a + c * d.a,
            e: self.e + c * d.e,
            m: self.m + c * d.m,
        }
    }
}

/// Integrates the closed scalar moment equations of the photodetected
/// single-mode cavity along a given click record (clicks are stamped with
/// the end time of their step, as in the matrix filter). The closure is
/// exact while every component stays within the zero/one-photon sector,
/// which holds for an empty initial cavity.
pub fn moment_oracle_pd(
    s: &SingleModeScenario,
    jump_times: &[f64],
    t_end: f64,
    dt: f64,
    stride: usize,
) -> Result<MomentSeries> {
    s.validate()?;
    positive("dt", dt)?;
    if stride == 0 {
        return Err(Error::validation("stride", "must be positive"));
    }
    let pulse = Pulse::exponential(s.gamma, s.t0)?;
    let kappa = s.kappa;
    let steps = (t_end / dt).round() as usize;
    let mut x = Moments {
        n: 0.0,
        a: C64::new(0.0, 0.0),
        e: 1.0,
        m: 0.0,
    };
    let mut out = MomentSeries {
        times: Vec::new(),
        n11: Vec::new(),
        a01: Vec::new(),
        e00: Vec::new(),
        n00: Vec::new(),
        nu: Vec::new(),
    };
    let push = |t: f64, x: &Moments, out: &mut MomentSeries| {
        out.times.push(t);
        out.n11.push(x.n);
        out.a01.push(x.a);
        out.e00.push(x.e);
        out.n00.push(x.m);
        out.nu.push(x.nu(kappa, pulse.xi(t)));
    };
    push(0.0, &x, &mut out);
    let mut next_jump = jump_times.iter().peekable();
    for k in 1..=steps {
        let t = (k - 1) as f64 * dt;
        let t1 = k as f64 * dt;
        let click = next_jump
            .peek()
            .is_some_and(|&&tj| (tj - t1).abs() < 0.5 * dt);
        if click {
            next_jump.next();
            let xi = pulse.xi(t);
            if !(x.nu(kappa, xi) > 0.0) {
                return Err(Error::ImpossibleJump.at_time(t1));
            }
            x = x.jump(kappa, xi);
        } else {
            let f = |y: &Moments, tt: f64| y.no_jump_rate(kappa, pulse.xi(tt));
            let k1 = f(&x, t);
            let k2 = f(&x.axpy(0.5 * dt, &k1), t + 0.5 * dt);
            let k3 = f(&x.axpy(0.5 * dt, &k2), t + 0.5 * dt);
            let k4 = f(&x.axpy(dt, &k3), t + dt);
            x = x
                .axpy(dt / 6.0, &k1)
                .axpy(dt / 3.0, &k2)
                .axpy(dt / 3.0, &k3)
                .axpy(dt / 6.0, &k4);
        }
        if k % stride == 0 {
            push(t1, &x, &mut out);
        }
    }
    Ok(out)
}

/// Conditional state on the no-click branch at time `t`.
pub fn pre_jump_state(s: &SingleModeScenario, t: f64, dt: f64) -> Result<Hierarchy> {
    let (model, pulse, h0) = build_single_mode(s)?;
    positive("dt", dt)?;
    let steps = (t / dt).round() as usize;
    let mut f = SmeFilter::new(&model, &pulse, h0)?;
    for _ in 0..steps {
        f.step_photodetect(dt, Draw::Force(false))?;
    }
    Ok(f.into_state())
}

/// Pre-jump state at `t` seen through its Wigner function.
#[derive(Debug, Clone, Serialize)]
pub struct WignerDiagnostic {
    pub t: f64,
    /// `<n>_11`.
    pub p: f64,
    /// `Σ_{m≠n} |ρ_mn|` of the normalized conditional state.
    pub off_diagonal_mass: f64,
    pub w_origin: f64,
    /// `(1 − 2p)/π`, the origin value of a vacuum/one-photon mixture.
    pub w_origin_mixture: f64,
    #[serde(skip)]
    pub grid: WignerGrid,
}

pub fn wigner_diagnostic(
    s: &SingleModeScenario,
    t: f64,
    dt: f64,
    xs: &[f64],
    ps: &[f64],
) -> Result<WignerDiagnostic> {
    let rho = pre_jump_state(s, t, dt)?.rho11()?;
    let m = rho.matrix();
    let p = (0..m.nrows()).map(|k| k as f64 * m[(k, k)].re).sum::<f64>();
    let mut off_diagonal_mass = 0.0;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if i != j {
                off_diagonal_mass += m[(i, j)].norm();
            }
        }
    }
    let w_origin = wigner(&rho, &[0.0], &[0.0])?.values[0];
    Ok(WignerDiagnostic {
        t,
        p,
        off_diagonal_mass,
        w_origin,
        w_origin_mixture: (1.0 - 2.0 * p) / std::f64::consts::PI,
        grid: wigner(&rho, xs, ps)?,
    })
}

/// `n + 1` points from `lo` to `hi` in steps of `step`.
pub fn grid_axis(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round().max(0.0) as usize;
    (0..=n).map(|k| lo + k as f64 * step).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    /// Displaced when `κ_b/κ_a ≥ 3`, bare otherwise.
    #[default]
    Auto,
    Bare,
    Displaced,
}

/// Ratio `κ_b/κ_a` from which [`Frame::Auto`] picks the displaced frame.
pub const DISPLACED_FRAME_RATIO: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KerrScenario {
    pub chi: f64,
    pub kappa_a: f64,
    pub kappa_b: f64,
    pub beta: f64,
    pub gamma: f64,
    pub dim_a: usize,
    /// `None` picks the smallest truncation passing the audit.
    pub dim_b: Option<usize>,
    pub frame: Frame,
    pub feedback: bool,
    pub t0: f64,
}

impl KerrScenario {
    /// Defaults: `β = κ_b²/(4κ_a)`, `γ = κ_a`, `dim_a = 3`, auto frame,
    /// feedback on.
    pub fn new(kappa_a: f64, kappa_b: f64, chi: f64) -> Self {
        Self {
            chi,
            kappa_a,
            kappa_b,
            beta: kappa_b * kappa_b / (4.0 * kappa_a),
            gamma: kappa_a,
            dim_a: 3,
            dim_b: None,
            frame: Frame::Auto,
            feedback: true,
            t0: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        positive("kappa_a", self.kappa_a)?;
        positive("kappa_b", self.kappa_b)?;
        positive("gamma", self.gamma)?;
        if !(self.chi >= 0.0 && self.chi.is_finite()) {
            return Err(Error::validation("chi", "must be non-negative"));
        }
        if !self.beta.is_finite() {
            return Err(Error::validation("beta", "must be finite"));
        }
        if self.dim_a < 2 {
            return Err(Error::validation("dim_a", "must be at least 2"));
        }
        if self.dim_b.is_some_and(|d| d < 2) {
            return Err(Error::validation("dim_b", "must be at least 2"));
        }
        Ok(())
    }

    /// Driven steady-state amplitude `−2iβ/κ_b`.
    pub fn alpha_ss(&self) -> C64 {
        C64::new(0.0, -2.0 * self.beta / self.kappa_b)
    }

    /// Cross-phase shift scale `4βχ/κ_b²`.
    pub fn delta_beta(&self) -> f64 {
        4.0 * self.beta.abs() * self.chi / (self.kappa_b * self.kappa_b)
    }

    pub fn resolved_frame(&self) -> Frame {
        match self.frame {
            Frame::Auto if self.kappa_b / self.kappa_a >= DISPLACED_FRAME_RATIO => Frame::Displaced,
            Frame::Auto => Frame::Bare,
            f => f,
        }
    }

    /// Smallest `dim_b` that holds the b-mode coherent amplitude plus a
    /// margin of twice the expected shift.
    pub fn required_dim_b(&self) -> usize {
        let margin = 2.0 * self.delta_beta();
        let amplitude = match self.resolved_frame() {
            Frame::Displaced => margin,
            _ => self.alpha_ss().norm() + margin,
        };
        coherent_dim_required(amplitude).max(2)
    }
}

/// A built Kerr experiment.
#[derive(Debug, Clone)]
pub struct KerrSetup {
    pub scenario: KerrScenario,
    pub model: SystemModel,
    pub pulse: Pulse,
    pub h0: Hierarchy,
    pub frame: Frame,
    pub dim_b: usize,
    /// `n_a` on the joint space.
    pub n_a: Operator,
    /// Physical `b` (frame displacement added back).
    pub b: Operator,
    /// Physical `b†b`.
    pub n_b: Operator,
}

impl KerrSetup {
    /// Samples `n_a`, `X_b = Re⟨b⟩` and `P_b = Im⟨b⟩` (plus the rate).
    pub fn trajectory_spec(&self, t_end: f64, dt: f64, stride: usize) -> TrajectorySpec {
        TrajectorySpec::new(t_end, dt, stride)
            .observe(Observable::re("n_a", self.n_a.clone()))
            .observe(Observable::re("X_b", self.b.clone()))
            .observe(Observable::im("P_b", self.b.clone()))
    }

    /// Steady-state `X_b`, the reference of the shift statistic.
    pub fn x_b_reference(&self) -> f64 {
        self.scenario.alpha_ss().re
    }
}

/// `H = χ n_b n_a + δ_a n_a + β*b + βb†`, monitored `√κ_a a`, unmonitored
/// `√κ_b b`, with `δ_a = −χ tr[n_b ρ11]` when feedback is on. In the
/// displaced frame `b = b' + α_ss`, the drive cancels against the decay and
/// `b'` starts in vacuum.
pub fn build_kerr(s: &KerrScenario) -> Result<KerrSetup> {
    s.validate()?;
    let frame = s.resolved_frame();
    let required = s.required_dim_b();
    let dim_b = match s.dim_b {
        Some(d) if d < required => {
            return Err(Error::Truncation(format!(
                "dim_b = {d} is too small for the {frame:?} frame; needs dim_b >= {required}"
            )))
        }
        Some(d) => d,
        None => required,
    };
    let layout = ModeLayout::new(vec![s.dim_a, dim_b])?;
    let (a, _) = ladder_ops(s.dim_a)?;
    let (bm, _) = ladder_ops(dim_b)?;
    let a = embed(&a, Slot::Mode(0), &layout)?;
    let b_frame = embed(&bm, Slot::Mode(1), &layout)?;
    let n_a = &a.adjoint() * &a;
    let alpha = s.alpha_ss();
    let id = Operator::identity(layout.total_dim());
    let b = match frame {
        Frame::Displaced => &b_frame + &(&id * alpha),
        _ => b_frame.clone(),
    };
    let n_b = &b.adjoint() * &b;

    let mut builder = SystemModel::builder(layout.clone());
    if s.chi != 0.0 {
        builder = builder.term(&n_b * &n_a, Coefficient::Constant(C64::new(s.chi, 0.0)));
    }
    if frame != Frame::Displaced && s.beta != 0.0 {
        builder = builder.term_with_adjoint(
            b_frame.adjoint(),
            Coefficient::Constant(C64::new(s.beta, 0.0)),
        );
    }
    if s.feedback && s.chi != 0.0 {
        let nb = n_b.matrix().clone();
        let chi = s.chi;
        let fb: FeedbackFn = Arc::new(move |_, r11: &CMatrix| {
            C64::new(-chi * crate::hilbert::trace_product(&nb, r11).re, 0.0)
        });
        builder = builder.term(n_a.clone(), Coefficient::Feedback(fb));
    }
    let model = builder
        .monitored(&a * s.kappa_a.sqrt())
        .unmonitored(&b_frame * s.kappa_b.sqrt())
        .build()?;
    let b_state = match frame {
        Frame::Displaced => Ket::vacuum(dim_b),
        _ => coherent_ket(alpha, dim_b)?,
    };
    let rho0 = Ket::vacuum(s.dim_a).tensor(&b_state).projector();
    Ok(KerrSetup {
        scenario: *s,
        model,
        pulse: Pulse::exponential(s.gamma, s.t0)?,
        h0: initial_hierarchy(&rho0)?,
        frame,
        dim_b,
        n_a,
        b,
        n_b,
    })
}

/// `δ_a = −χ tr[n_b ρ11]`.
pub fn feedback_detuning(h: &Hierarchy, chi: f64, n_b: &Operator) -> f64 {
    -chi * crate::hilbert::trace_product(n_b.matrix(), &h.r11).re
}

/// Kerr trajectory observables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryObservables {
    pub times: Vec<f64>,
    pub n_a: Vec<f64>,
    pub x_b: Vec<f64>,
    pub p_b: Vec<f64>,
    pub nu: Vec<f64>,
    pub jump_times: Vec<f64>,
    /// `max_t |X_b(t) − X_b(ss)|`, tracked on every step.
    pub max_shift: f64,
}

impl TrajectoryObservables {
    /// Reads a trajectory produced with [`KerrSetup::trajectory_spec`].
    pub fn from_trajectory(tr: &Trajectory, x_ref: f64) -> Result<Self> {
        let col = |name: &str| {
            tr.column(name)
                .map(<[f64]>::to_vec)
                .ok_or_else(|| Error::Internal(format!("trajectory has no column {name}")))
        };
        let ix = tr
            .columns
            .iter()
            .position(|c| c == "X_b")
            .ok_or_else(|| Error::Internal("trajectory has no column X_b".into()))?;
        let (lo, hi) = tr.extremes[ix];
        Ok(Self {
            times: tr.times.clone(),
            n_a: col("n_a")?,
            x_b: col("X_b")?,
            p_b: col("P_b")?,
            nu: col("nu").or_else(|_| col("K"))?,
            jump_times: tr.record.jump_times().to_vec(),
            max_shift: (hi - x_ref).abs().max((lo - x_ref).abs()),
        })
    }
}

pub fn max_conditional_shift(obs: &TrajectoryObservables) -> f64 {
    obs.max_shift
}

/// Time from the first click until `|X_b − x_ref|` falls below `1/e` of its
/// value at the click. `None` without a click or if it never relaxes.
pub fn relaxation_time(obs: &TrajectoryObservables, x_ref: f64) -> Option<f64> {
    let tj = *obs.jump_times.first()?;
    let k = obs.times.iter().position(|&t| t >= tj)?;
    let start = (obs.x_b[k] - x_ref).abs();
    let target = start / std::f64::consts::E;
    obs.times[k..]
        .iter()
        .zip(&obs.x_b[k..])
        .find(|(_, &x)| (x - x_ref).abs() <= target)
        .map(|(&t, _)| t - tj)
}

/// Largest run of empty bins with occupied bins on both sides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Gap {
    pub first_bin: usize,
    pub bins: usize,
    pub left: f64,
    pub right: f64,
    /// Counts below and above the gap.
    pub mass_below: u64,
    pub mass_above: u64,
}

/// Fixed-edge histogram `[0, bins·width)` plus an overflow count.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftHistogram {
    pub bin_width: f64,
    pub counts: Vec<u64>,
    pub overflow: u64,
    pub gap: Option<Gap>,
    pub median: f64,
    pub n: usize,
}

impl ShiftHistogram {
    pub fn edges(&self, i: usize) -> (f64, f64) {
        (i as f64 * self.bin_width, (i + 1) as f64 * self.bin_width)
    }

    pub fn to_table(&self) -> crate::output::Table {
        let mut t =
            crate::output::Table::new(["bin_left", "bin_right", "count"]).with_integers(&["count"]);
        for (i, &c) in self.counts.iter().enumerate() {
            let (l, r) = self.edges(i);
            t.push(vec![l, r, c as f64]);
        }
        t
    }
}

/// Minimum number of values for a histogram.
pub const MIN_HISTOGRAM_VALUES: usize = 100;

/// Histogram of max shifts on fixed edges `k·bin_width`, `k < bins`, with a
/// gap report: the longest run of at least two consecutive empty bins that
/// has occupied bins on both sides.
pub fn shift_histogram(values: &[f64], bin_width: f64, bins: usize) -> Result<ShiftHistogram> {
    if values.len() < MIN_HISTOGRAM_VALUES {
        return Err(Error::validation(
            "values",
            format!(
                "need at least {MIN_HISTOGRAM_VALUES} values, got {}",
                values.len()
            ),
        ));
    }
    positive("bin_width", bin_width)?;
    if bins == 0 {
        return Err(Error::validation("bins", "must be positive"));
    }
    let mut counts = vec![0u64; bins];
    let mut overflow = 0;
    for &v in values {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::validation(
                "values",
                format!("shift {v} is not a finite non-negative number"),
            ));
        }
        let k = (v / bin_width).floor() as usize;
        match counts.get_mut(k) {
            Some(c) => *c += 1,
            None => overflow += 1,
        }
    }
    let median = median(values);
    let mut h = ShiftHistogram {
        bin_width,
        gap: None,
        counts,
        overflow,
        median,
        n: values.len(),
    };
    h.gap = find_gap(&h);
    Ok(h)
}

/// Median (NaN when empty).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 0 => 0.5 * (v[m - 1] + v[m]),
        _ => v[m],
    }
}

fn find_gap(h: &ShiftHistogram) -> Option<Gap> {
    let occupied: Vec<usize> = h
        .counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(i, _)| i)
        .collect();
    let last = if h.overflow > 0 {
        h.counts.len()
    } else {
        *occupied.last()?
    };
    let mut best: Option<(usize, usize)> = None;
    let mut run_start = None;
    for i in *occupied.first()?..last {
        if h.counts[i] == 0 {
            run_start.get_or_insert(i);
        } else if let Some(s) = run_start.take() {
            if best.is_none_or(|(_, len)| i - s > len) {
                best = Some((s, i - s));
            }
        }
    }
    if let Some(s) = run_start {
        if h.overflow > 0 && best.is_none_or(|(_, len)| last - s > len) {
            best = Some((s, last - s));
        }
    }
    let (first_bin, bins) = best.filter(|&(_, len)| len >= 2)?;
    let below: u64 = h.counts[..first_bin].iter().sum();
    Some(Gap {
        first_bin,
        bins,
        left: first_bin as f64 * h.bin_width,
        right: (first_bin + bins) as f64 * h.bin_width,
        mass_below: below,
        mass_above: h.n as u64 - below,
    })
}

/// Outcome forced on a checked step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    NoClick,
    Click,
}

/// One photodetection step of the filter compared against the closed-form
/// increment of `⟨b⟩11`: drift `−iβ − iχ⟨b n_a⟩11 − κ_b⟨b⟩11/2` and the
/// click bracket `tr[b J11]/ν − ⟨b⟩11`, with `J11` the jump map of `ρ11`.
/// Returns `|Δ_filter − Δ_formula|`.
pub fn b_increment_check(
    setup: &KerrSetup,
    h: &Hierarchy,
    dt: f64,
    outcome: Outcome,
) -> Result<f64> {
    let s = &setup.scenario;
    let b = setup.b.matrix();
    let mean = |m: &CMatrix| (b * m).trace();
    let xi = setup.pulse.xi(h.t);
    let l = setup.model.monitored().matrix();
    let j11 = l * &h.r11 * l.adjoint()
        + &h.r01 * l.adjoint() * xi
        + l * &h.r10 * xi.conj()
        + &h.r00 * C64::new(xi.norm_sqr(), 0.0);
    let nu = j11.trace().re;
    let b11 = mean(&h.r11);
    // ν·bracket stays finite as ν → 0
    let nu_bracket = mean(&j11) - b11 * nu;
    let expected = match outcome {
        Outcome::Click if nu <= 0.0 => return Err(Error::ImpossibleJump.at_time(h.t)),
        Outcome::Click => nu_bracket / nu,
        Outcome::NoClick => {
            let bna = (b * setup.n_a.matrix() * &h.r11).trace();
            let drift =
                C64::new(0.0, -s.beta) - C64::new(0.0, s.chi) * bna - b11 * (0.5 * s.kappa_b);
            (drift - nu_bracket) * dt
        }
    };
    let mut f = SmeFilter::new(&setup.model, &setup.pulse, h.clone())?;
    f.step_photodetect(dt, Draw::Force(outcome == Outcome::Click))?;
    let got = mean(&f.state().r11) - b11;
    Ok((got - expected).norm())
}

/// Top-level population of mode `slot` in `ρ11`, for truncation audits.
pub fn top_population(setup: &KerrSetup, h: &Hierarchy, slot: Slot) -> Result<f64> {
    DensityOp::from_matrix(h.r11.clone())?.top_level_population(setup.model.layout(), slot)
}

/// Number operator of the single-mode cavity.
pub fn single_mode_number(s: &SingleModeScenario) -> Operator {
    number_op(s.dim_a)
}

#[cfg(test)]
mod tests;
