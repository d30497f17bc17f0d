//! Preallocated evaluation of the hierarchy drift, jump maps and noise terms.
//!
//! Only `ρ11`, `ρ01` and `ρ00` are evolved; `ρ10` is rewritten as `ρ01†`
//! after every update. When `ρ00` and `ρ01` are both exactly zero (after a
//! detection from a single-photon input) they stay zero and are skipped.

use super::{Hierarchy, ModelKernel, SystemModel};
use crate::error::{Error, Result};
use crate::hilbert::{CMatrix, C64};
use crate::kernel::{add_hermitian_part, adjoint_into, axpy, is_zero, scale, trace, SparseOp};
use crate::pulse::Pulse;

pub(crate) const C11: usize = 0;
pub(crate) const C01: usize = 1;
pub(crate) const C00: usize = 2;

const ONE: C64 = C64::new(1.0, 0.0);
const ZERO: C64 = C64::new(0.0, 0.0);

/// Imaginary parts of the rates above this are treated as state corruption.
const RATE_IMAG_TOLERANCE: f64 = 1e-6;
/// Negative detection rates down to this are rounding noise and clamp to 0.
const NU_NEGATIVE_TOLERANCE: f64 = 1e-9;

pub(crate) struct Engine {
    heff: SparseOp,
    pub lr: [CMatrix; 3],
    pub lrl: [CMatrix; 3],
    pub d: [CMatrix; 3],
    pub j: [CMatrix; 3],
    pub noise: [CMatrix; 3],
    /// `ρ01 L†`
    pub rld: CMatrix,
    tmp: CMatrix,
    stage: Option<Box<Rk4Buffers>>,
}

struct Rk4Buffers {
    stage: Hierarchy,
    acc: [CMatrix; 3],
    frozen: CMatrix,
}

fn zeros3(n: usize) -> [CMatrix; 3] {
    [
        CMatrix::zeros(n, n),
        CMatrix::zeros(n, n),
        CMatrix::zeros(n, n),
    ]
}

pub(crate) fn is_active(h: &Hierarchy) -> bool {
    !(is_zero(&h.r00) && is_zero(&h.r01))
}

impl Engine {
    pub fn new(model: &SystemModel) -> Self {
        let n = model.dim();
        Self {
            heff: model.kernel.heff_static.clone(),
            lr: zeros3(n),
            lrl: zeros3(n),
            d: zeros3(n),
            j: zeros3(n),
            noise: zeros3(n),
            rld: CMatrix::zeros(n, n),
            tmp: CMatrix::zeros(n, n),
            stage: None,
        }
    }

    /// Effective Hamiltonian as last assembled.
    pub fn heff(&self) -> &SparseOp {
        &self.heff
    }

    /// Fills the effective Hamiltonian at time `t`, reading feedback terms
    /// from `r11`.
    pub fn assemble(&mut self, model: &SystemModel, t: f64, r11: &CMatrix) -> Result<()> {
        let k = &model.kernel;
        if k.dynamic.is_empty() {
            return Ok(());
        }
        self.heff.set_values(k.heff_static.values());
        let vals = self.heff.values_mut();
        for term in &k.dynamic {
            let c = term.coeff.eval(t, r11);
            let c = if term.with_adjoint {
                c
            } else {
                C64::new(super::real_coefficient(c)?, 0.0)
            };
            for (&p, &v) in term.index.iter().zip(&term.values) {
                vals[p] += c * v;
            }
            if term.with_adjoint {
                let cc = c.conj();
                for (&p, &v) in term.adj_index.iter().zip(&term.adj_values) {
                    vals[p] += cc * v;
                }
            }
        }
        Ok(())
    }

    /// `d[which] = ℒr`, leaving `L r` and `L r L†` in `lr`/`lrl`.
    fn liouvillian(&mut self, k: &ModelKernel, which: usize, r: &CMatrix) {
        let d = &mut self.d[which];
        d.fill(ZERO);
        if which == C01 {
            self.heff.lmul_acc(d, C64::new(0.0, -1.0), r);
            self.heff.rmul_adj_acc(d, C64::new(0.0, 1.0), r);
        } else {
            // r is Hermitian: −i Heff r + h.c.
            self.tmp.fill(ZERO);
            self.heff.lmul_acc(&mut self.tmp, C64::new(0.0, -1.0), r);
            add_hermitian_part(d, &self.tmp);
        }
        let lr = &mut self.lr[which];
        lr.fill(ZERO);
        k.l.lmul_acc(lr, ONE, r);
        let lrl = &mut self.lrl[which];
        lrl.fill(ZERO);
        k.l.rmul_adj_acc(lrl, ONE, lr);
        axpy(d, ONE, lrl);
        for e in &k.extra {
            self.tmp.fill(ZERO);
            e.lmul_acc(&mut self.tmp, ONE, r);
            e.rmul_adj_acc(d, ONE, &self.tmp);
        }
    }

    /// Drift of the unconditional hierarchy into `d`.
    pub fn drift(&mut self, model: &SystemModel, xi: C64, h: &Hierarchy, active: bool) {
        let k = &*model.kernel;
        self.liouvillian(k, C11, &h.r11);
        if !active {
            for c in [C01, C00] {
                self.d[c].fill(ZERO);
                self.lr[c].fill(ZERO);
                self.lrl[c].fill(ZERO);
            }
            self.rld.fill(ZERO);
            return;
        }
        self.liouvillian(k, C01, &h.r01);
        self.liouvillian(k, C00, &h.r00);
        self.rld.fill(ZERO);
        k.l.rmul_adj_acc(&mut self.rld, ONE, &h.r01);
        if xi != ZERO {
            // ξ(ρ01 L† − L† ρ01) + h.c.
            self.tmp.fill(ZERO);
            axpy(&mut self.tmp, xi, &self.rld);
            k.l.lmul_adj_acc(&mut self.tmp, -xi, &h.r01);
            add_hermitian_part(&mut self.d[C11], &self.tmp);
            // ξ*(L ρ00 − ρ00 L)
            let (d, lr) = (&mut self.d[C01], &self.lr[C00]);
            axpy(d, xi.conj(), lr);
            k.l.rmul_acc(d, -xi.conj(), &h.r00);
        }
    }

    /// Unnormalized jump maps into `j`; requires a preceding [`Self::drift`].
    pub fn jump_maps(&mut self, xi: C64, h: &Hierarchy, active: bool) {
        self.j[C11].copy_from(&self.lrl[C11]);
        if !active {
            self.j[C01].fill(ZERO);
            self.j[C00].fill(ZERO);
            return;
        }
        let j11 = &mut self.j[C11];
        axpy(j11, C64::new(xi.norm_sqr(), 0.0), &h.r00);
        self.tmp.fill(ZERO);
        axpy(&mut self.tmp, xi, &self.rld);
        add_hermitian_part(j11, &self.tmp);
        self.j[C01].copy_from(&self.lrl[C01]);
        axpy(&mut self.j[C01], xi.conj(), &self.lr[C00]);
        self.j[C00].copy_from(&self.lrl[C00]);
    }

    /// Detection rate `ν`; requires a preceding [`Self::drift`].
    pub fn nu(&self, model: &SystemModel, xi: C64, h: &Hierarchy) -> Result<f64> {
        checked_nu(self.nu_raw(model, xi, h))
    }

    fn nu_raw(&self, model: &SystemModel, xi: C64, h: &Hierarchy) -> C64 {
        let l = &model.kernel.l;
        trace(&self.lrl[C11])
            + xi.conj() * l.trace_mul(&h.r10)
            + xi * l.trace_adj_mul(&h.r01)
            + trace(&h.r00) * xi.norm_sqr()
    }

    /// Homodyne rate `K = tr[(L+L†)ρ11 + ξρ01 + ξ*ρ10]`.
    pub fn k_value(&self, model: &SystemModel, xi: C64, h: &Hierarchy) -> Result<f64> {
        let l = &model.kernel.l;
        checked_k(
            l.trace_mul(&h.r11)
                + l.trace_adj_mul(&h.r11)
                + xi * trace(&h.r01)
                + xi.conj() * trace(&h.r10),
        )
    }

    /// `out = M x`, `M = 1 − i·Heff·dt + L·dy`.
    fn m_left(&self, l: &SparseOp, out: &mut CMatrix, x: &CMatrix, dt: f64, dy: f64) {
        out.copy_from(x);
        self.heff.lmul_acc(out, C64::new(0.0, -dt), x);
        l.lmul_acc(out, C64::new(dy, 0.0), x);
    }

    /// `out += c·x M†`.
    fn m_right_acc(&self, l: &SparseOp, out: &mut CMatrix, c: C64, x: &CMatrix, dt: f64, dy: f64) {
        axpy(out, c, x);
        self.heff.rmul_adj_acc(out, c * C64::new(0.0, dt), x);
        l.rmul_adj_acc(out, c * dy, x);
    }

    /// One homodyne step in Kraus form. The monitored channel of the
    /// system-plus-wavepacket picture is applied as `ϱ → MϱM†` with
    /// `M = 1 − (iH_T + ½L_T†L_T)dt + L_T dY`, written back in hierarchy
    /// variables; this is the Euler–Maruyama increment plus its `dY²`
    /// completion, which keeps `ρ11` positive. `r2 = |ξ|²/w` and
    /// `q = w(t)/w(t+dt)`. Leaves `h` unnormalized.
    #[allow(clippy::too_many_arguments)]
    pub fn kraus_homodyne(
        &mut self,
        model: &SystemModel,
        xi: C64,
        r2: f64,
        q: f64,
        h: &mut Hierarchy,
        dt: f64,
        dy: f64,
        active: bool,
    ) {
        let k = &*model.kernel;
        let l = &k.l;
        let empty = || CMatrix::zeros(0, 0);
        let [mut n11, mut n01, mut n00] =
            std::mem::replace(&mut self.noise, [empty(), empty(), empty()]);
        let mut a = std::mem::replace(&mut self.d[C11], empty());
        let mut b = std::mem::replace(&mut self.d[C01], empty());
        let mut tmp = std::mem::replace(&mut self.tmp, empty());
        let (n11, n01, n00) = (&mut n11, &mut n01, &mut n00);

        n11.fill(ZERO);
        self.m_left(l, &mut a, &h.r11, dt, dy);
        self.m_right_acc(l, n11, ONE, &a, dt, dy);
        for e in &k.extra {
            tmp.fill(ZERO);
            e.lmul_acc(&mut tmp, ONE, &h.r11);
            e.rmul_adj_acc(n11, C64::new(dt, 0.0), &tmp);
        }
        if active {
            let dyc = C64::new(dy, 0.0);
            let x2 = xi.norm_sqr();
            // P = ξ* M ρ10 G†, G = dY − L† dt
            self.m_left(l, &mut a, &h.r10, dt, dy);
            tmp.fill(ZERO);
            axpy(&mut tmp, xi.conj() * dyc, &a);
            l.rmul_acc(&mut tmp, -xi.conj() * dt, &a);
            add_hermitian_part(n11, &tmp);
            // |ξ|² G ρ00 G†
            b.copy_from(&h.r00);
            scale(&mut b, dy);
            l.lmul_adj_acc(&mut b, C64::new(-dt, 0.0), &h.r00);
            axpy(n11, C64::new(x2 * dy, 0.0), &b);
            l.rmul_acc(n11, C64::new(-x2 * dt, 0.0), &b);
            // −½|ξ|²dt (Mρ00 + ρ00M†) + ¼|ξ|²r²dt² ρ00
            self.m_left(l, &mut a, &h.r00, dt, dy);
            tmp.fill(ZERO);
            axpy(&mut tmp, C64::new(-0.5 * x2 * dt, 0.0), &a);
            add_hermitian_part(n11, &tmp);
            axpy(n11, C64::new(0.25 * x2 * r2 * dt * dt, 0.0), &h.r00);

            let eps = C64::new(0.5 * r2 * dt, 0.0);
            let sq = q.sqrt();
            // ρ01 ← √q (M − ε)(ξ* ρ00 G† + ρ01 M†)
            b.fill(ZERO);
            axpy(&mut b, xi.conj() * dyc, &h.r00);
            l.rmul_acc(&mut b, -xi.conj() * dt, &h.r00);
            self.m_right_acc(l, &mut b, ONE, &h.r01, dt, dy);
            self.m_left(l, &mut a, &b, dt, dy);
            axpy(&mut a, -eps, &b);
            n01.fill(ZERO);
            axpy(n01, C64::new(sq, 0.0), &a);
            // ρ00 ← q (M − ε) ρ00 (M − ε)†
            self.m_left(l, &mut a, &h.r00, dt, dy);
            axpy(&mut a, -eps, &h.r00);
            n00.fill(ZERO);
            self.m_right_acc(l, n00, C64::new(q, 0.0), &a, dt, dy);
            axpy(n00, C64::new(-q, 0.0) * eps, &a);
            for e in &k.extra {
                for (src, dst, f) in [(&h.r01, &mut *n01, sq), (&h.r00, &mut *n00, q)] {
                    tmp.fill(ZERO);
                    e.lmul_acc(&mut tmp, ONE, src);
                    e.rmul_adj_acc(dst, C64::new(f * dt, 0.0), &tmp);
                }
            }
            std::mem::swap(&mut h.r01, n01);
            std::mem::swap(&mut h.r00, n00);
            adjoint_into(&mut h.r10, &h.r01);
        }
        std::mem::swap(&mut h.r11, n11);
        self.d[C11] = a;
        self.d[C01] = b;
        self.tmp = tmp;
        self.noise = [
            std::mem::take(n11),
            std::mem::take(n01),
            std::mem::take(n00),
        ];
    }

    /// Classical RK4 on the unconditional hierarchy. Time-dependent terms are
    /// evaluated at the stage times, feedback terms at the step start.
    pub fn rk4_step(
        &mut self,
        model: &SystemModel,
        pulse: &Pulse,
        h: &mut Hierarchy,
        dt: f64,
    ) -> Result<()> {
        if !(dt > 0.0) {
            return Err(Error::validation("dt", "must be positive"));
        }
        let n = h.dim();
        let mut buf = self.stage.take().unwrap_or_else(|| {
            Box::new(Rk4Buffers {
                stage: h.clone(),
                acc: zeros3(n),
                frozen: CMatrix::zeros(n, n),
            })
        });
        let result = self.rk4_inner(model, pulse, h, dt, None, &mut buf);
        self.stage = Some(buf);
        result
    }

    /// RK4 on the normalized no-detection evolution `ρ̇ = ℒρ − Jρ + νρ`.
    /// The trace of `ρ11` is preserved by every stage, so only the structural
    /// invariants are left to the caller. Expects `drift` and `jump_maps`
    /// already evaluated at `h` (the first stage), with rate `nu0`.
    pub fn no_jump_rk4(
        &mut self,
        model: &SystemModel,
        pulse: &Pulse,
        h: &mut Hierarchy,
        dt: f64,
        nu0: f64,
    ) -> Result<()> {
        let n = h.dim();
        let mut buf = self.stage.take().unwrap_or_else(|| {
            Box::new(Rk4Buffers {
                stage: h.clone(),
                acc: zeros3(n),
                frozen: CMatrix::zeros(n, n),
            })
        });
        let result = self.rk4_inner(model, pulse, h, dt, Some(nu0), &mut buf);
        self.stage = Some(buf);
        result
    }

    fn rk4_inner(
        &mut self,
        model: &SystemModel,
        pulse: &Pulse,
        h: &mut Hierarchy,
        dt: f64,
        conditioned: Option<f64>,
        buf: &mut Rk4Buffers,
    ) -> Result<()> {
        let active = is_active(h);
        let t = h.t;
        buf.frozen.copy_from(&h.r11);
        for a in &mut buf.acc {
            a.fill(ZERO);
        }
        const NODES: [(f64, f64); 4] = [
            (0.0, 1.0 / 6.0),
            (0.5, 1.0 / 3.0),
            (0.5, 1.0 / 3.0),
            (1.0, 1.0 / 6.0),
        ];
        for (i, &(c, w)) in NODES.iter().enumerate() {
            let s = &mut buf.stage;
            if let (0, Some(nu0)) = (i, conditioned) {
                let nu = C64::new(nu0, 0.0);
                for (comp, r) in [(C11, &h.r11), (C01, &h.r01), (C00, &h.r00)] {
                    axpy(&mut self.d[comp], -ONE, &self.j[comp]);
                    axpy(&mut self.d[comp], nu, r);
                }
                let f = C64::new(w * dt, 0.0);
                for comp in [C11, C01, C00] {
                    axpy(&mut buf.acc[comp], f, &self.d[comp]);
                }
                continue;
            }
            s.r11.copy_from(&h.r11);
            s.r01.copy_from(&h.r01);
            s.r00.copy_from(&h.r00);
            if i > 0 {
                let f = C64::new(c * dt, 0.0);
                axpy(&mut s.r11, f, &self.d[C11]);
                axpy(&mut s.r01, f, &self.d[C01]);
                axpy(&mut s.r00, f, &self.d[C00]);
            }
            adjoint_into(&mut s.r10, &s.r01);
            let ts = t + c * dt;
            s.t = ts;
            self.assemble(model, ts, &buf.frozen)?;
            let xi = pulse.xi(ts);
            self.drift(model, xi, s, active);
            if conditioned.is_some() {
                // Stage rates are not clamped; only the step-start rate is checked.
                let nu = C64::new(self.nu_raw(model, xi, s).re, 0.0);
                self.jump_maps(xi, s, active);
                for (comp, r) in [(C11, &s.r11), (C01, &s.r01), (C00, &s.r00)] {
                    axpy(&mut self.d[comp], -ONE, &self.j[comp]);
                    axpy(&mut self.d[comp], nu, r);
                }
            }
            let f = C64::new(w * dt, 0.0);
            for comp in [C11, C01, C00] {
                axpy(&mut buf.acc[comp], f, &self.d[comp]);
            }
        }
        axpy(&mut h.r11, ONE, &buf.acc[C11]);
        axpy(&mut h.r01, ONE, &buf.acc[C01]);
        axpy(&mut h.r00, ONE, &buf.acc[C00]);
        adjoint_into(&mut h.r10, &h.r01);
        h.t = t + dt;
        if conditioned.is_some() {
            return Ok(());
        }
        h.validate(1e-6).map_err(|e| e.at_time(h.t))
    }
}

pub(crate) fn checked_nu(raw: C64) -> Result<f64> {
    if !raw.re.is_finite() || raw.im.abs() >= RATE_IMAG_TOLERANCE {
        return Err(Error::CorruptedState(format!("detection rate ν = {raw}")));
    }
    if raw.re < -NU_NEGATIVE_TOLERANCE {
        return Err(Error::CorruptedState(format!(
            "negative detection rate ν = {:.3e}",
            raw.re
        )));
    }
    Ok(raw.re.max(0.0))
}

pub(crate) fn checked_k(raw: C64) -> Result<f64> {
    if !raw.re.is_finite() || raw.im.abs() >= RATE_IMAG_TOLERANCE {
        return Err(Error::CorruptedState(format!("homodyne rate K = {raw}")));
    }
    Ok(raw.re)
}
