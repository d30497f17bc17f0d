//! Pure-state picture: the photon source is replaced by a two-level
//! ancilla prepared in `|e⟩`, whose decay into the monitored channel
//! reproduces the wavepacket. The joint state is a ket on
//! `system ⊗ ancilla` (ancilla index last, `|g⟩ = 0`, `|e⟩ = 1`).

use crate::error::{Error, Result};
use crate::filters::{
    run_conditional, Conditional, Draw, InvariantAudit, NoiseSource, Scheme, StepDraw, StepResult,
    Trajectory, TrajectorySpec, MAX_JUMP_PROBABILITY,
};
use crate::hierarchy::{Engine, Hierarchy, SystemModel};
use crate::hilbert::{
    embed, embed_system, sigma_minus, CMatrix, CVector, Ket, ModeLayout, Operator, Slot, C64,
};
use crate::kernel::SparseOp;
use crate::pulse::Pulse;

/// Below this remaining weight `ρ00` and `ρ01` are not extracted.
pub const EXTRACTION_MIN_WEIGHT: f64 = 1e-10;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

#[derive(Debug, Clone, PartialEq)]
pub struct JointKet {
    layout: ModeLayout,
    psi: Ket,
    pub t: f64,
}

impl JointKet {
    /// `|ψ⟩ ⊗ |e⟩` at `t = 0`.
    pub fn excited(system: &Ket, layout: &ModeLayout) -> Result<Self> {
        let layout = layout.with_ancilla();
        if system.dim() != layout.system_dim() {
            return Err(Error::Shape(format!(
                "system ket of dim {} for layout of system dim {}",
                system.dim(),
                layout.system_dim()
            )));
        }
        let e = Ket::basis(2, 1)?;
        Ok(Self {
            psi: system.normalized()?.tensor(&e),
            layout,
            t: 0.0,
        })
    }

    pub fn from_parts(layout: &ModeLayout, psi: Ket, t: f64) -> Result<Self> {
        let layout = layout.with_ancilla();
        if psi.dim() != layout.total_dim() {
            return Err(Error::Shape(format!(
                "joint ket of dim {} for layout of dim {}",
                psi.dim(),
                layout.total_dim()
            )));
        }
        if (psi.norm() - 1.0).abs() > 1e-8 {
            return Err(Error::Physicality(format!("joint ket norm {}", psi.norm())));
        }
        Ok(Self { layout, psi, t })
    }

    pub fn layout(&self) -> &ModeLayout {
        &self.layout
    }

    pub fn psi(&self) -> &Ket {
        &self.psi
    }

    /// `⟨a|Ψ⟩⟨Ψ|b⟩` as a system operator, `a, b ∈ {0 = g, 1 = e}`.
    pub fn ancilla_block(&self, a: usize, b: usize) -> CMatrix {
        block(self.psi.amplitudes().as_slice(), a, b)
    }
}

fn block(psi: &[C64], a: usize, b: usize) -> CMatrix {
    let n = psi.len() / 2;
    CMatrix::from_fn(n, n, |i, j| psi[2 * i + a] * psi[2 * j + b].conj())
}

fn system_state(psi: &[C64]) -> CMatrix {
    block(psi, 0, 0) + block(psi, 1, 1)
}

fn single_channel(model: &SystemModel) -> Result<()> {
    if model.unmonitored().is_empty() {
        Ok(())
    } else {
        Err(Error::Unsupported(
            "the pure-state picture cannot carry unmonitored channels; use the hierarchy filter"
                .into(),
        ))
    }
}

/// `L_T = L ⊗ 1 + (ξ/√w) σ₋`.
pub fn total_coupling(model: &SystemModel, pulse: &Pulse, t: f64) -> Result<Operator> {
    let layout = model.layout().with_ancilla();
    let l = embed_system(model.monitored(), &layout)?;
    let sm = embed(&sigma_minus(), Slot::Ancilla, &layout)?;
    Ok(&l + &(&sm * pulse.xi_over_sqrt_w(t)))
}

/// `H_T = H ⊗ 1 + (i/2)(r* σ₊L − r L†σ₋)`, `r = ξ/√w`; `r11` feeds any
/// feedback terms of `H`.
pub fn total_hamiltonian(
    model: &SystemModel,
    pulse: &Pulse,
    t: f64,
    r11: &CMatrix,
) -> Result<Operator> {
    let layout = model.layout().with_ancilla();
    let h = embed_system(&model.hamiltonian(t, r11)?, &layout)?;
    let l = embed_system(model.monitored(), &layout)?;
    let sm = embed(&sigma_minus(), Slot::Ancilla, &layout)?;
    let r = pulse.xi_over_sqrt_w(t);
    let half_i = C64::new(0.0, 0.5);
    let x = &(&(&sm.adjoint() * &l) * r.conj()) - &(&(&l.adjoint() * &sm) * r);
    let ht = &h + &(&x * half_i);
    let res = ht.hermiticity_residue();
    if res > 1e-10 {
        return Err(Error::Internal(format!(
            "H_T Hermiticity residue {res:.3e}"
        )));
    }
    Ok(ht)
}

/// Hierarchy read off a joint ket.
#[derive(Debug, Clone, PartialEq)]
pub enum Extraction {
    Full(Hierarchy),
    /// The wavepacket weight is below [`EXTRACTION_MIN_WEIGHT`]; only the
    /// physical state is available.
    Partial {
        r11: CMatrix,
        t: f64,
    },
}

impl Extraction {
    pub fn r11(&self) -> &CMatrix {
        match self {
            Extraction::Full(h) => &h.r11,
            Extraction::Partial { r11, .. } => r11,
        }
    }

    pub fn full(self) -> Option<Hierarchy> {
        match self {
            Extraction::Full(h) => Some(h),
            Extraction::Partial { .. } => None,
        }
    }
}

/// `ρ00 = ϱee/w`, `ρ01 = ϱeg/√w`, `ρ10 = ϱge/√w`, `ρ11 = ϱee + ϱgg`, all
/// divided by `tr ρ11`.
pub fn extract_hierarchy(jk: &JointKet, pulse: &Pulse) -> Extraction {
    let psi = jk.psi.amplitudes().as_slice();
    let mut r11 = system_state(psi);
    let tr = r11.trace().re;
    r11 /= C64::new(tr, 0.0);
    let w = pulse.w(jk.t);
    if w < EXTRACTION_MIN_WEIGHT {
        return Extraction::Partial { r11, t: jk.t };
    }
    let r00 = block(psi, 1, 1) / C64::new(w * tr, 0.0);
    let r01 = block(psi, 1, 0) / C64::new(w.sqrt() * tr, 0.0);
    let r10 = r01.adjoint();
    Extraction::Full(Hierarchy {
        r00,
        r01,
        r10,
        r11,
        t: jk.t,
    })
}

/// Stochastic Schrödinger stepper on the joint ket.
///
/// Both schemes mirror the hierarchy filter step for step: the diffusive
/// update applies `M = 1 − iH_eff,T dt + L_T dY` and renormalizes, the
/// no-detection branch is RK4 on `−iH_eff,T`. Driven by the same draws the
/// extracted hierarchy follows the filter to rounding error.
pub struct SseFilter<'a> {
    model: &'a SystemModel,
    pulse: &'a Pulse,
    engine: Engine,
    l: SparseOp,
    psi: Vec<C64>,
    t: f64,
    frozen: CMatrix,
    lpsi: Vec<C64>,
    work: [Vec<C64>; 3],
}

impl<'a> SseFilter<'a> {
    pub fn new(model: &'a SystemModel, pulse: &'a Pulse, jk: JointKet) -> Result<Self> {
        single_channel(model)?;
        if jk.layout.system_dim() != model.dim() {
            return Err(Error::Shape(format!(
                "joint ket system dim {} vs model dim {}",
                jk.layout.system_dim(),
                model.dim()
            )));
        }
        let psi: Vec<C64> = jk.psi.amplitudes().iter().copied().collect();
        let len = psi.len();
        Ok(Self {
            model,
            pulse,
            engine: Engine::new(model),
            l: SparseOp::from_operator(model.monitored()),
            psi,
            t: jk.t,
            frozen: CMatrix::zeros(0, 0),
            lpsi: vec![ZERO; len],
            work: [vec![ZERO; len], vec![ZERO; len], vec![ZERO; len]],
        })
    }

    pub fn state(&self) -> JointKet {
        JointKet {
            layout: self.model.layout().with_ancilla(),
            psi: Ket::from_amplitudes(CVector::from_column_slice(&self.psi)).expect("normalized"),
            t: self.t,
        }
    }

    fn assemble(&mut self, t: f64) -> Result<()> {
        self.engine.assemble(self.model, t, &self.frozen)
    }

    fn freeze(&mut self) {
        if self.model.has_feedback() {
            self.frozen = system_state(&self.psi);
        }
    }

    /// `out += c · H_eff,T x` with `r = ξ/√w`.
    fn heff_acc(&self, out: &mut [C64], c: C64, x: &[C64], r: C64) {
        let heff = self.engine.heff();
        heff.vec_acc(out, c, x, 2, 0, 0);
        heff.vec_acc(out, c, x, 2, 1, 1);
        self.l
            .vec_adj_acc(out, c * C64::new(0.0, -1.0) * r, x, 2, 0, 1);
        let f = c * C64::new(0.0, -0.5 * r.norm_sqr());
        for s in 0..x.len() / 2 {
            out[2 * s + 1] += f * x[2 * s + 1];
        }
    }

    /// `lpsi = L_T ψ`.
    fn apply_coupling(&mut self, r: C64) {
        let out = &mut self.lpsi;
        out.fill(ZERO);
        self.l.vec_acc(out, ONE, &self.psi, 2, 0, 0);
        self.l.vec_acc(out, ONE, &self.psi, 2, 1, 1);
        for s in 0..self.psi.len() / 2 {
            out[2 * s] += r * self.psi[2 * s + 1];
        }
    }

    /// Divides by the norm; `continuous` steps must stay close to unit norm.
    fn normalize(&mut self, continuous: bool) -> Result<f64> {
        let n2: f64 = self.psi.iter().map(|z| z.norm_sqr()).sum();
        if !(n2 >= 0.5) && continuous || !(n2 > 0.0) {
            return Err(Error::Instability(format!(
                "‖ψ‖² = {n2:.4} before renormalization; reduce dt"
            )));
        }
        let inv = 1.0 / n2.sqrt();
        self.psi.iter_mut().for_each(|z| *z *= inv);
        Ok(n2)
    }

    /// `(2 Re⟨L_T⟩, ⟨L_T†L_T⟩)`, requires a preceding `apply_coupling`.
    fn rates(&self) -> (f64, f64) {
        let lz: C64 = self
            .psi
            .iter()
            .zip(&self.lpsi)
            .map(|(p, q)| p.conj() * q)
            .sum();
        let nu: f64 = self.lpsi.iter().map(|z| z.norm_sqr()).sum();
        (2.0 * lz.re, nu)
    }

    pub fn rate(&mut self, scheme: Scheme) -> f64 {
        self.apply_coupling(self.pulse.xi_over_sqrt_w(self.t));
        let (k, nu) = self.rates();
        match scheme {
            Scheme::Homodyne => k,
            Scheme::Photodetect => nu,
        }
    }

    pub fn step_homodyne(&mut self, dt: f64, dw: f64) -> Result<StepResult> {
        check_dt(dt)?;
        let t = self.t;
        self.freeze();
        self.assemble(t)?;
        let r = self.pulse.xi_over_sqrt_w(t);
        self.apply_coupling(r);
        let (k, _) = self.rates();
        let dy = k * dt + dw;
        let mut next = std::mem::take(&mut self.work[0]);
        next.copy_from_slice(&self.psi);
        self.heff_acc(&mut next, C64::new(0.0, -dt), &self.psi, r);
        for (z, lz) in next.iter_mut().zip(&self.lpsi) {
            *z += dy * lz;
        }
        std::mem::swap(&mut self.psi, &mut next);
        self.work[0] = next;
        self.normalize(true)?;
        self.t = t + dt;
        Ok(StepResult {
            jumped: false,
            dy,
            rate: k,
            norm_before: None,
        })
    }

    pub fn step_photodetect(&mut self, dt: f64, draw: Draw) -> Result<StepResult> {
        check_dt(dt)?;
        let t = self.t;
        self.apply_coupling(self.pulse.xi_over_sqrt_w(t));
        let (_, nu) = self.rates();
        let p = nu * dt;
        if p >= MAX_JUMP_PROBABILITY {
            return Err(Error::StepSize(format!(
                "jump probability ⟨L_T†L_T⟩·dt = {p:.3} must stay below {MAX_JUMP_PROBABILITY}"
            )));
        }
        let jumped = match draw {
            Draw::Uniform(u) => u < p,
            Draw::Force(j) => j,
        };
        if jumped {
            if !(nu > 0.0) {
                return Err(Error::ImpossibleJump);
            }
            std::mem::swap(&mut self.psi, &mut self.lpsi);
        } else {
            self.freeze();
            self.no_jump_rk4(t, dt)?;
        }
        self.normalize(!jumped)?;
        self.t = t + dt;
        Ok(StepResult {
            jumped,
            dy: 0.0,
            rate: nu,
            norm_before: None,
        })
    }

    fn no_jump_rk4(&mut self, t: f64, dt: f64) -> Result<()> {
        const NODES: [(f64, f64); 4] = [
            (0.0, 1.0 / 6.0),
            (0.5, 1.0 / 3.0),
            (0.5, 1.0 / 3.0),
            (1.0, 1.0 / 6.0),
        ];
        let [mut stage, mut k, mut acc] = std::mem::take(&mut self.work);
        acc.fill(ZERO);
        k.fill(ZERO);
        let mi = C64::new(0.0, -1.0);
        for &(c, w) in &NODES {
            stage.copy_from_slice(&self.psi);
            if c > 0.0 {
                for (s, kk) in stage.iter_mut().zip(&k) {
                    *s += c * dt * kk;
                }
            }
            let ts = t + c * dt;
            self.assemble(ts)?;
            k.fill(ZERO);
            self.heff_acc(&mut k, mi, &stage, self.pulse.xi_over_sqrt_w(ts));
            for (a, kk) in acc.iter_mut().zip(&k) {
                *a += w * dt * kk;
            }
        }
        for (p, a) in self.psi.iter_mut().zip(&acc) {
            *p += a;
        }
        self.work = [stage, k, acc];
        Ok(())
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::validation("dt", "must be positive"))
    }
}

impl Conditional for SseFilter<'_> {
    fn time(&self) -> f64 {
        self.t
    }

    fn step(&mut self, scheme: Scheme, dt: f64, draw: StepDraw) -> Result<StepResult> {
        match (scheme, draw) {
            (Scheme::Homodyne, StepDraw::Wiener(dw)) => self.step_homodyne(dt, dw),
            (Scheme::Photodetect, StepDraw::Jump(d)) => self.step_photodetect(dt, d),
            _ => Err(Error::Internal("draw does not match the scheme".into())),
        }
    }

    fn observe(&self, op: &SparseOp) -> C64 {
        let mut tmp = vec![ZERO; self.psi.len()];
        op.vec_acc(&mut tmp, ONE, &self.psi, 2, 0, 0);
        op.vec_acc(&mut tmp, ONE, &self.psi, 2, 1, 1);
        self.psi.iter().zip(&tmp).map(|(p, q)| p.conj() * q).sum()
    }

    fn rate(&mut self, scheme: Scheme) -> Result<f64> {
        Ok(SseFilter::rate(self, scheme))
    }

    fn audit_step(&self, audit: &mut InvariantAudit, _: &StepResult) {
        let n2: f64 = self.psi.iter().map(|z| z.norm_sqr()).sum();
        audit.record_norm(n2);
    }

    fn audit_sample(&self, audit: &mut InvariantAudit) {
        audit.record_spectrum(&system_state(&self.psi));
    }
}

/// One diffusive step of the joint ket; returns the state and `dY`.
pub fn sse_homodyne_step(
    model: &SystemModel,
    pulse: &Pulse,
    jk: &JointKet,
    dt: f64,
    noise: &mut NoiseSource,
) -> Result<(JointKet, f64)> {
    let mut f = SseFilter::new(model, pulse, jk.clone())?;
    let r = f.step_homodyne(dt, dt.sqrt() * noise.normal())?;
    Ok((f.state(), r.dy))
}

/// One counting step of the joint ket; returns the state and whether a click occurred.
pub fn sse_photodetect_step(
    model: &SystemModel,
    pulse: &Pulse,
    jk: &JointKet,
    dt: f64,
    noise: &mut NoiseSource,
) -> Result<(JointKet, bool)> {
    let mut f = SseFilter::new(model, pulse, jk.clone())?;
    let r = f.step_photodetect(dt, Draw::Uniform(noise.uniform()))?;
    Ok((f.state(), r.jumped))
}

/// One conditional trajectory in the pure-state picture.
pub fn simulate_sse_trajectory(
    model: &SystemModel,
    pulse: &Pulse,
    scheme: Scheme,
    jk0: &JointKet,
    spec: &TrajectorySpec,
    noise: &mut NoiseSource,
) -> Result<Trajectory> {
    let mut f = SseFilter::new(model, pulse, jk0.clone())?;
    run_conditional(&mut f, scheme, spec, noise)
}
