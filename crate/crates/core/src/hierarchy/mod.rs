//! The four-component single-photon master equation and its model.
//!
//! A [`Hierarchy`] holds `(ρ00, ρ01, ρ10, ρ11)`. Only `ρ11` is a physical
//! state; the other three carry the correlations with the photon wavepacket.

pub(crate) mod engine;

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::hilbert::{
    embed, ladder_ops, max_abs_diff, CMatrix, DensityOp, ModeLayout, Operator, Slot, C64,
};
use crate::kernel::SparseOp;
use crate::pulse::Pulse;

pub(crate) use engine::Engine;

pub type TimeFn = Arc<dyn Fn(f64) -> C64 + Send + Sync>;
/// Receives the time and the current conditional state `ρ11`.
pub type FeedbackFn = Arc<dyn Fn(f64, &CMatrix) -> C64 + Send + Sync>;

#[derive(Clone)]
pub enum Coefficient {
    Constant(C64),
    Time(TimeFn),
    /// State-dependent; deterministic integrators hold it fixed over a step.
    Feedback(FeedbackFn),
}

impl Coefficient {
    pub fn eval(&self, t: f64, r11: &CMatrix) -> C64 {
        match self {
            Coefficient::Constant(c) => *c,
            Coefficient::Time(f) => f(t),
            Coefficient::Feedback(f) => f(t, r11),
        }
    }

    fn is_constant(&self) -> bool {
        matches!(self, Coefficient::Constant(_))
    }

    fn is_feedback(&self) -> bool {
        matches!(self, Coefficient::Feedback(_))
    }
}

impl fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coefficient::Constant(c) => write!(f, "Constant({c})"),
            Coefficient::Time(_) => f.write_str("Time(..)"),
            Coefficient::Feedback(_) => f.write_str("Feedback(..)"),
        }
    }
}

/// `c·op` (op Hermitian, c real) or `c·op + c*·op†`.
#[derive(Debug, Clone)]
pub struct HamiltonianTerm {
    pub op: Operator,
    pub coeff: Coefficient,
    pub with_adjoint: bool,
}

/// Hamiltonian, monitored coupling and unmonitored couplings of an open system.
#[derive(Clone)]
pub struct SystemModel {
    layout: ModeLayout,
    terms: Vec<HamiltonianTerm>,
    monitored: Operator,
    extra: Vec<Operator>,
    pub(crate) kernel: Arc<ModelKernel>,
}

impl fmt::Debug for SystemModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemModel")
            .field("layout", &self.layout)
            .field("terms", &self.terms.len())
            .field("extra", &self.extra.len())
            .finish()
    }
}

#[derive(Debug)]
pub struct ModelBuilder {
    layout: ModeLayout,
    terms: Vec<HamiltonianTerm>,
    monitored: Option<Operator>,
    extra: Vec<Operator>,
}

impl ModelBuilder {
    /// Adds `c(t)·op`; `op` must be Hermitian and `c` real.
    pub fn term(mut self, op: Operator, coeff: Coefficient) -> Self {
        self.terms.push(HamiltonianTerm {
            op,
            coeff,
            with_adjoint: false,
        });
        self
    }

    /// Adds `c(t)·op + c(t)*·op†`.
    pub fn term_with_adjoint(mut self, op: Operator, coeff: Coefficient) -> Self {
        self.terms.push(HamiltonianTerm {
            op,
            coeff,
            with_adjoint: true,
        });
        self
    }

    pub fn monitored(mut self, l: Operator) -> Self {
        self.monitored = Some(l);
        self
    }

    pub fn unmonitored(mut self, l: Operator) -> Self {
        self.extra.push(l);
        self
    }

    pub fn build(self) -> Result<SystemModel> {
        let n = self.layout.system_dim();
        if self.layout.has_ancilla() {
            return Err(Error::Shape(
                "system model layout must not carry the ancilla".into(),
            ));
        }
        let monitored = self.monitored.unwrap_or_else(|| Operator::zeros(n));
        let shape = |op: &Operator, what: &str| {
            if op.dim() == n {
                Ok(())
            } else {
                Err(Error::Shape(format!(
                    "{what} has dim {}, layout needs {n}",
                    op.dim()
                )))
            }
        };
        shape(&monitored, "monitored coupling")?;
        for l in &self.extra {
            shape(l, "unmonitored coupling")?;
        }
        for t in &self.terms {
            shape(&t.op, "Hamiltonian term")?;
            if !t.with_adjoint && !t.op.is_hermitian(1e-10) {
                return Err(Error::Physicality(format!(
                    "Hamiltonian term is not Hermitian (residue {:.3e}); use term_with_adjoint",
                    t.op.hermiticity_residue()
                )));
            }
            if let Coefficient::Constant(c) = t.coeff {
                if !t.with_adjoint {
                    real_coefficient(c)?;
                }
            }
        }
        let kernel = ModelKernel::new(n, &self.terms, &monitored, &self.extra);
        Ok(SystemModel {
            layout: self.layout,
            terms: self.terms,
            monitored,
            extra: self.extra,
            kernel: Arc::new(kernel),
        })
    }
}

fn real_coefficient(c: C64) -> Result<f64> {
    if c.im.abs() > 1e-12 * c.norm().max(1.0) || !c.re.is_finite() {
        return Err(Error::Physicality(format!(
            "coefficient {c} of a Hermitian term makes H(t) non-Hermitian"
        )));
    }
    Ok(c.re)
}

impl SystemModel {
    pub fn builder(layout: ModeLayout) -> ModelBuilder {
        ModelBuilder {
            layout,
            terms: Vec::new(),
            monitored: None,
            extra: Vec::new(),
        }
    }

    pub fn layout(&self) -> &ModeLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.system_dim()
    }

    pub fn monitored(&self) -> &Operator {
        &self.monitored
    }

    pub fn unmonitored(&self) -> &[Operator] {
        &self.extra
    }

    pub fn terms(&self) -> &[HamiltonianTerm] {
        &self.terms
    }

    pub fn has_feedback(&self) -> bool {
        self.terms.iter().any(|t| t.coeff.is_feedback())
    }

    /// Dense `H(t)` given the conditional state used by feedback terms.
    pub fn hamiltonian(&self, t: f64, r11: &CMatrix) -> Result<Operator> {
        let n = self.dim();
        let mut h = CMatrix::zeros(n, n);
        for term in &self.terms {
            let c = term.coeff.eval(t, r11);
            if term.with_adjoint {
                h += term.op.matrix() * c + term.op.matrix().adjoint() * c.conj();
            } else {
                h += term.op.matrix() * C64::new(real_coefficient(c)?, 0.0);
            }
        }
        let h = Operator::from_matrix(h)?;
        let res = h.hermiticity_residue();
        if res > 1e-10 {
            return Err(Error::Physicality(format!(
                "H(t) Hermiticity residue {res:.3e}"
            )));
        }
        Ok(h)
    }
}

/// Sparse forms of the model operators, with the effective Hamiltonian
/// `H − (i/2)ΣL†L` laid out on one union pattern.
#[derive(Debug)]
pub(crate) struct ModelKernel {
    pub l: SparseOp,
    pub extra: Vec<SparseOp>,
    pub heff_static: SparseOp,
    pub dynamic: Vec<DynamicTerm>,
}

#[derive(Debug)]
pub(crate) struct DynamicTerm {
    pub coeff: Coefficient,
    pub with_adjoint: bool,
    pub index: Vec<usize>,
    pub values: Vec<C64>,
    pub adj_index: Vec<usize>,
    pub adj_values: Vec<C64>,
}

impl ModelKernel {
    fn new(n: usize, terms: &[HamiltonianTerm], l: &Operator, extra: &[Operator]) -> Self {
        let mut stat = CMatrix::zeros(n, n);
        let half_i = C64::new(0.0, -0.5);
        for op in std::iter::once(l).chain(extra) {
            stat += op.matrix().adjoint() * op.matrix() * half_i;
        }
        for t in terms.iter().filter(|t| t.coeff.is_constant()) {
            let c = t.coeff.eval(0.0, &stat);
            stat += t.op.matrix() * c;
            if t.with_adjoint {
                stat += t.op.matrix().adjoint() * c.conj();
            }
        }
        let mut heff_static = SparseOp::from_dense(&stat);
        let dynamic = terms
            .iter()
            .filter(|t| !t.coeff.is_constant())
            .map(|t| {
                let s = SparseOp::from_operator(&t.op);
                let index = heff_static.merge_pattern(&s);
                let values = s.to_values();
                let (adj_index, adj_values) = if t.with_adjoint {
                    let sa = s.adjoint();
                    (heff_static.merge_pattern(&sa), sa.to_values())
                } else {
                    (Vec::new(), Vec::new())
                };
                DynamicTerm {
                    coeff: t.coeff.clone(),
                    with_adjoint: t.with_adjoint,
                    index,
                    values,
                    adj_index,
                    adj_values,
                }
            })
            .collect();
        Self {
            l: SparseOp::from_operator(l),
            extra: extra.iter().map(SparseOp::from_operator).collect(),
            heff_static,
            dynamic,
        }
    }
}

/// Filter state `(ρ00, ρ01, ρ10, ρ11)` at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hierarchy {
    pub r00: CMatrix,
    pub r01: CMatrix,
    pub r10: CMatrix,
    pub r11: CMatrix,
    pub t: f64,
}

/// Time derivative of the four components.
#[derive(Debug, Clone, PartialEq)]
pub struct Increment {
    pub d00: CMatrix,
    pub d01: CMatrix,
    pub d10: CMatrix,
    pub d11: CMatrix,
}

/// Which hierarchy component an expectation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    C00,
    C01,
    C10,
    C11,
}

impl Hierarchy {
    pub fn dim(&self) -> usize {
        self.r11.nrows()
    }

    pub fn component(&self, c: Component) -> &CMatrix {
        match c {
            Component::C00 => &self.r00,
            Component::C01 => &self.r01,
            Component::C10 => &self.r10,
            Component::C11 => &self.r11,
        }
    }

    /// `⟨c⟩_ij = tr[(ρ_ij)† c]`.
    pub fn expect(&self, which: Component, op: &Operator) -> C64 {
        (self.component(which).adjoint() * op.matrix()).trace()
    }

    pub fn rho11(&self) -> Result<DensityOp> {
        DensityOp::from_matrix(self.r11.clone())
    }

    /// Largest violation of the structural invariants: trace of `ρ11`,
    /// Hermiticity of `ρ11` and `ρ00`, and `ρ10 = ρ01†`.
    pub fn invariant_residue(&self) -> f64 {
        let tr = (self.r11.trace() - C64::new(1.0, 0.0)).norm();
        let h11 = crate::hilbert::hermiticity_residue(&self.r11);
        let h00 = crate::hilbert::hermiticity_residue(&self.r00);
        let pair = max_abs_diff(&self.r10, &self.r01.adjoint());
        tr.max(h11).max(h00).max(pair)
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        let res = self.invariant_residue();
        if res > tol || !res.is_finite() {
            return Err(Error::Instability(format!(
                "hierarchy invariants violated (residue {res:.3e} > {tol:.1e})"
            )));
        }
        Ok(())
    }
}

/// `ρ11 = ρ00 = ρ0`, `ρ01 = ρ10 = 0`.
pub fn initial_hierarchy(rho0: &DensityOp) -> Result<Hierarchy> {
    rho0.validate_physical()?;
    let n = rho0.dim();
    Ok(Hierarchy {
        r00: rho0.matrix().clone(),
        r01: CMatrix::zeros(n, n),
        r10: CMatrix::zeros(n, n),
        r11: rho0.matrix().clone(),
        t: 0.0,
    })
}

fn dissipator(l: &CMatrix, rho: &CMatrix) -> CMatrix {
    let ld = l.adjoint();
    let ldl = &ld * l;
    l * rho * &ld - (&ldl * rho + rho * &ldl) * C64::new(0.5, 0.0)
}

/// `ℒρ = −i[H, ρ] + Σ D[L_k]ρ` over the monitored and unmonitored channels.
/// Feedback terms read `ρ` itself as the conditional state.
pub fn lindblad_rhs(model: &SystemModel, t: f64, rho: &DensityOp) -> Result<CMatrix> {
    crate::hilbert::check_dims(rho.dim(), model.dim())?;
    let h = model.hamiltonian(t, rho.matrix())?;
    Ok(liouvillian(model, h.matrix(), rho.matrix()))
}

fn liouvillian(model: &SystemModel, h: &CMatrix, rho: &CMatrix) -> CMatrix {
    let mi = C64::new(0.0, -1.0);
    let mut out = (h * rho - rho * h) * mi;
    out += dissipator(model.monitored.matrix(), rho);
    for l in &model.extra {
        out += dissipator(l.matrix(), rho);
    }
    out
}

/// Right-hand side of the unconditional hierarchy, all four components
/// computed independently with dense products.
pub fn hierarchy_rhs(
    model: &SystemModel,
    pulse: &Pulse,
    t: f64,
    h: &Hierarchy,
) -> Result<Increment> {
    crate::hilbert::check_dims(h.dim(), model.dim())?;
    let xi = pulse.xi(t);
    let ham = model.hamiltonian(t, &h.r11)?;
    let ham = ham.matrix();
    let l = model.monitored.matrix();
    let ld = l.adjoint();
    let comm = |a: &CMatrix, b: &CMatrix| a * b - b * a;
    let d11 =
        liouvillian(model, ham, &h.r11) + comm(&h.r01, &ld) * xi + comm(l, &h.r10) * xi.conj();
    let d01 = liouvillian(model, ham, &h.r01) + comm(l, &h.r00) * xi.conj();
    let d10 = liouvillian(model, ham, &h.r10) + comm(&h.r00, &ld) * xi;
    let d00 = liouvillian(model, ham, &h.r00);
    Ok(Increment { d00, d01, d10, d11 })
}

/// One classical RK4 step of the unconditional hierarchy.
pub fn step_me(model: &SystemModel, pulse: &Pulse, h: &Hierarchy, dt: f64) -> Result<Hierarchy> {
    let mut engine = Engine::new(model);
    let mut next = h.clone();
    engine.rk4_step(model, pulse, &mut next, dt)?;
    Ok(next)
}

/// RK4 step of the plain Lindblad equation (the hierarchy with no photon).
pub fn step_lindblad(model: &SystemModel, rho: &DensityOp, t: f64, dt: f64) -> Result<DensityOp> {
    let h = Hierarchy {
        r00: CMatrix::zeros(rho.dim(), rho.dim()),
        r01: CMatrix::zeros(rho.dim(), rho.dim()),
        r10: CMatrix::zeros(rho.dim(), rho.dim()),
        r11: rho.matrix().clone(),
        t,
    };
    let next = step_me(model, &Pulse::absent(), &h, dt)?;
    DensityOp::from_matrix(next.r11)
}

/// Fixed-grid RK4 integration from `h0` to `t_end`, calling `observe` at
/// `h0` and after every `stride` steps.
pub fn integrate_me<F>(
    model: &SystemModel,
    pulse: &Pulse,
    h0: &Hierarchy,
    t_end: f64,
    dt: f64,
    stride: usize,
    mut observe: F,
) -> Result<Hierarchy>
where
    F: FnMut(&Hierarchy),
{
    if !(dt > 0.0) || stride == 0 {
        return Err(Error::validation(
            "dt",
            "time step and stride must be positive",
        ));
    }
    let steps = ((t_end - h0.t) / dt).round().max(0.0) as usize;
    let mut engine = Engine::new(model);
    let mut h = h0.clone();
    observe(&h);
    for k in 1..=steps {
        engine.rk4_step(model, pulse, &mut h, dt)?;
        h.t = h0.t + k as f64 * dt;
        if k % stride == 0 {
            observe(&h);
        }
    }
    Ok(h)
}

/// Mean photon number of a cavity (rate κ) fed by an exponential photon (rate γ):
/// `4γκ (e^{−γτ/2} − e^{−κτ/2})² / (κ − γ)²`, `τ = t − t0`.
pub fn closed_form_n11(gamma: f64, kappa: f64, t: f64, t0: f64) -> f64 {
    let tau = t - t0;
    if tau < 0.0 {
        return 0.0;
    }
    if ((gamma - kappa) / kappa).abs() < 1e-6 {
        let k = 0.5 * (gamma + kappa);
        return k * k * tau * tau * (-k * tau).exp();
    }
    let diff = (-0.5 * gamma * tau).exp() - (-0.5 * kappa * tau).exp();
    4.0 * gamma * kappa * diff * diff / ((kappa - gamma) * (kappa - gamma))
}

/// Single-mode cavity `L = √κ a` driven by the classical field
/// `ε(t) = i√κ ξ(t)`: `H(t) = i√κ (ξ a† − ξ* a)`.
pub fn coherent_reference_model(kappa: f64, pulse: &Pulse, dim: usize) -> Result<SystemModel> {
    if !(kappa > 0.0) {
        return Err(Error::validation("kappa", "must be positive"));
    }
    let layout = ModeLayout::single(dim)?;
    let (a, ad) = ladder_ops(dim)?;
    let sk = kappa.sqrt();
    let p = pulse.clone();
    let drive: TimeFn = Arc::new(move |t| C64::new(0.0, sk) * p.xi(t));
    SystemModel::builder(layout.clone())
        .term_with_adjoint(
            embed(&ad, Slot::Mode(0), &layout)?,
            Coefficient::Time(drive),
        )
        .monitored(&a * sk)
        .build()
}
