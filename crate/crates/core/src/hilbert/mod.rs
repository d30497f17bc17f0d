//! Truncated Fock-space algebra.
//!
//! Operators and states are dense complex matrices. Tensor products follow a
//! fixed slot order: modes in the order given by [`ModeLayout::dims`], then
//! the optional two-level ancilla last. The ancilla basis is `|g⟩ = 0`,
//! `|e⟩ = 1`, so `σ₋ = |g⟩⟨e|` has the same matrix as a two-level ladder
//! operator.

mod wigner;

use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub use wigner::{wigner, WignerGrid};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub(crate) const ONE: C64 = C64::new(1.0, 0.0);
pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);

/// Top-level population above which a truncation is reported as a warning.
pub const TRUNCATION_WARNING: f64 = 1e-4;
/// Top-level population above which a truncation is treated as an error.
pub const TRUNCATION_ERROR: f64 = 1e-2;

/// Position of a factor in a tensor-product layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Mode(usize),
    Ancilla,
}

/// Per-mode truncation dimensions, optionally followed by a two-level ancilla.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModeLayout {
    dims: Vec<usize>,
    ancilla: bool,
}

impl ModeLayout {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidDimension(
                "layout needs at least one mode".into(),
            ));
        }
        if let Some(d) = dims.iter().find(|&&d| d == 0) {
            return Err(Error::InvalidDimension(format!("mode dimension {d} < 1")));
        }
        Ok(Self {
            dims,
            ancilla: false,
        })
    }

    pub fn single(dim: usize) -> Result<Self> {
        Self::new(vec![dim])
    }

    /// Same modes with the two-level ancilla appended.
    pub fn with_ancilla(&self) -> Self {
        Self {
            dims: self.dims.clone(),
            ancilla: true,
        }
    }

    /// Same modes without the ancilla.
    pub fn system(&self) -> Self {
        Self {
            dims: self.dims.clone(),
            ancilla: false,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn has_ancilla(&self) -> bool {
        self.ancilla
    }

    pub fn n_modes(&self) -> usize {
        self.dims.len()
    }

    pub fn system_dim(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn total_dim(&self) -> usize {
        self.system_dim() * if self.ancilla { 2 } else { 1 }
    }

    pub fn slot_dim(&self, slot: Slot) -> Result<usize> {
        match slot {
            Slot::Mode(k) => self.dims.get(k).copied().ok_or_else(|| {
                Error::Shape(format!(
                    "mode slot {k} out of range ({} modes)",
                    self.dims.len()
                ))
            }),
            Slot::Ancilla if self.ancilla => Ok(2),
            Slot::Ancilla => Err(Error::Shape("layout has no ancilla slot".into())),
        }
    }

    fn slots(&self) -> impl Iterator<Item = (Slot, usize)> + '_ {
        self.dims
            .iter()
            .enumerate()
            .map(|(k, &d)| (Slot::Mode(k), d))
            .chain(self.ancilla.then_some((Slot::Ancilla, 2)))
    }

    /// Stride of `slot` in the flattened basis index and the slot dimension.
    fn stride_of(&self, slot: Slot) -> Result<(usize, usize)> {
        let dim = self.slot_dim(slot)?;
        let mut stride = 1;
        for (s, d) in self.slots().collect::<Vec<_>>().into_iter().rev() {
            if s == slot {
                return Ok((stride, dim));
            }
            stride *= d;
        }
        unreachable!("slot_dim succeeded so the slot exists")
    }

    /// Level of `slot` in the flattened basis state `index`.
    pub fn level_of(&self, index: usize, slot: Slot) -> Result<usize> {
        let (stride, dim) = self.stride_of(slot)?;
        Ok((index / stride) % dim)
    }
}

/// Square complex matrix acting on a (possibly composite) truncated space.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator(CMatrix);

impl Operator {
    pub fn from_matrix(m: CMatrix) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::Shape(format!(
                "operator must be square and nonempty, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Physicality("operator has non-finite entries".into()));
        }
        Ok(Self(m))
    }

    pub fn identity(dim: usize) -> Self {
        Self(CMatrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(CMatrix::zeros(dim, dim))
    }

    /// Diagonal operator with real entries.
    pub fn diagonal(values: &[f64]) -> Self {
        let n = values.len();
        Self(CMatrix::from_fn(n, n, |i, j| {
            if i == j {
                C64::new(values[i], 0.0)
            } else {
                ZERO
            }
        }))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn adjoint(&self) -> Self {
        Self(self.0.adjoint())
    }

    pub fn scale(&self, c: C64) -> Self {
        Self(&self.0 * c)
    }

    pub fn commutator(&self, other: &Operator) -> Result<Self> {
        check_dims(self.dim(), other.dim())?;
        Ok(Self(&self.0 * &other.0 - &other.0 * &self.0))
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    /// Largest entrywise modulus of `A − A†`.
    pub fn hermiticity_residue(&self) -> f64 {
        hermiticity_residue(&self.0)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_residue() <= tol
    }

    pub fn max_abs_diff(&self, other: &Operator) -> f64 {
        max_abs_diff(&self.0, &other.0)
    }
}

impl Mul for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        assert_eq!(self.dim(), rhs.dim(), "operator dimension mismatch");
        Operator(&self.0 * &rhs.0)
    }
}

impl Add for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        assert_eq!(self.dim(), rhs.dim(), "operator dimension mismatch");
        Operator(&self.0 + &rhs.0)
    }
}

impl Sub for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        assert_eq!(self.dim(), rhs.dim(), "operator dimension mismatch");
        Operator(&self.0 - &rhs.0)
    }
}

impl Mul<C64> for &Operator {
    type Output = Operator;
    fn mul(self, c: C64) -> Operator {
        self.scale(c)
    }
}

impl Mul<f64> for &Operator {
    type Output = Operator;
    fn mul(self, c: f64) -> Operator {
        self.scale(C64::new(c, 0.0))
    }
}

/// Pure state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Ket(CVector);

impl Ket {
    pub fn from_amplitudes(v: CVector) -> Result<Self> {
        if v.is_empty() {
            return Err(Error::Shape("empty ket".into()));
        }
        if v.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Physicality("ket has non-finite amplitudes".into()));
        }
        Ok(Self(v))
    }

    pub fn basis(dim: usize, k: usize) -> Result<Self> {
        if k >= dim {
            return Err(Error::Shape(format!(
                "basis index {k} outside dimension {dim}"
            )));
        }
        let mut v = CVector::zeros(dim);
        v[k] = ONE;
        Ok(Self(v))
    }

    pub fn vacuum(dim: usize) -> Self {
        Self::basis(dim, 0).expect("dim >= 1")
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::Physicality("cannot normalize a null ket".into()));
        }
        Ok(Self(&self.0 / C64::new(n, 0.0)))
    }

    pub fn tensor(&self, other: &Ket) -> Ket {
        Ket(self.0.kronecker(&other.0))
    }

    pub fn projector(&self) -> DensityOp {
        DensityOp(&self.0 * self.0.adjoint())
    }
}

/// Density operator (or an operator in the same space sharing its layout).
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOp(CMatrix);

impl DensityOp {
    /// Accepts any square finite matrix; use [`DensityOp::validate_physical`]
    /// where physicality is a precondition.
    pub fn from_matrix(m: CMatrix) -> Result<Self> {
        Operator::from_matrix(m).map(|op| Self(op.0))
    }

    pub fn fock(dim: usize, n: usize) -> Result<Self> {
        Ok(Ket::basis(dim, n)?.projector())
    }

    pub fn vacuum(dim: usize) -> Self {
        Ket::vacuum(dim).projector()
    }

    /// Diagonal mixture of Fock states with the given populations.
    pub fn fock_mixture(populations: &[f64]) -> Self {
        Self(Operator::diagonal(populations).0)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    pub fn hermiticity_residue(&self) -> f64 {
        hermiticity_residue(&self.0)
    }

    pub fn purity(&self) -> f64 {
        (&self.0 * &self.0).trace().re
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.0)
    }

    /// Hermitian within `1e-10` and unit trace within `1e-8`.
    pub fn validate_physical(&self) -> Result<()> {
        let herm = self.hermiticity_residue();
        if herm > 1e-10 {
            return Err(Error::Physicality(format!(
                "hermiticity residue {herm:.3e}"
            )));
        }
        let tr = self.trace();
        if (tr.re - 1.0).abs() > 1e-8 || tr.im.abs() > 1e-10 {
            return Err(Error::Physicality(format!("trace {tr} is not 1")));
        }
        Ok(())
    }

    pub fn tensor(&self, other: &DensityOp) -> DensityOp {
        DensityOp(self.0.kronecker(&other.0))
    }

    /// Reduced state of one slot.
    pub fn partial_trace(&self, layout: &ModeLayout, keep: Slot) -> Result<DensityOp> {
        check_dims(layout.total_dim(), self.dim())?;
        let (stride, dk) = layout.stride_of(keep)?;
        let n = self.dim();
        let mut out = CMatrix::zeros(dk, dk);
        // Basis index = outer * dk * stride + level * stride + inner.
        let outer_count = n / (dk * stride);
        for outer in 0..outer_count {
            for inner in 0..stride {
                let base = outer * dk * stride + inner;
                for i in 0..dk {
                    for j in 0..dk {
                        out[(i, j)] += self.0[(base + i * stride, base + j * stride)];
                    }
                }
            }
        }
        Ok(DensityOp(out))
    }

    /// Population of the highest retained Fock level of `slot`.
    pub fn top_level_population(&self, layout: &ModeLayout, slot: Slot) -> Result<f64> {
        top_level_population(&self.0, layout, slot)
    }
}

/// Ladder operators `(a, a†)` on a Fock space truncated to `dim` levels.
pub fn ladder_ops(dim: usize) -> Result<(Operator, Operator)> {
    if dim < 2 {
        return Err(Error::InvalidDimension(format!(
            "ladder operators need dim >= 2, got {dim}"
        )));
    }
    let a = CMatrix::from_fn(dim, dim, |i, j| {
        if j == i + 1 {
            C64::new((j as f64).sqrt(), 0.0)
        } else {
            ZERO
        }
    });
    let a = Operator(a);
    let ad = a.adjoint();
    Ok((a, ad))
}

/// Number operator `a†a` on `dim` levels.
pub fn number_op(dim: usize) -> Operator {
    Operator::diagonal(&(0..dim).map(|k| k as f64).collect::<Vec<_>>())
}

/// `σ₋ = |g⟩⟨e|` in the ancilla basis `(|g⟩, |e⟩)`.
pub fn sigma_minus() -> Operator {
    ladder_ops(2).expect("dim 2").0
}

/// Kronecker embedding of a single-slot operator into `layout`.
pub fn embed(op: &Operator, slot: Slot, layout: &ModeLayout) -> Result<Operator> {
    let want = layout.slot_dim(slot)?;
    if op.dim() != want {
        return Err(Error::Shape(format!(
            "operator of dim {} does not fit slot {slot:?} of dim {want}",
            op.dim()
        )));
    }
    let mut acc: Option<CMatrix> = None;
    for (s, d) in layout.slots() {
        let factor = if s == slot {
            op.0.clone()
        } else {
            CMatrix::identity(d, d)
        };
        acc = Some(match acc {
            None => factor,
            Some(m) => m.kronecker(&factor),
        });
    }
    Ok(Operator(acc.expect("layout has at least one slot")))
}

/// Embeds a system-space operator (all modes) into a layout with ancilla.
pub fn embed_system(op: &Operator, layout: &ModeLayout) -> Result<Operator> {
    let sys = layout.system_dim();
    if op.dim() != sys {
        return Err(Error::Shape(format!(
            "system operator of dim {} does not match system dim {sys}",
            op.dim()
        )));
    }
    if layout.has_ancilla() {
        Ok(Operator(op.0.kronecker(&CMatrix::identity(2, 2))))
    } else {
        Ok(op.clone())
    }
}

/// States that define `⟨op⟩`.
pub trait Expectation {
    fn expectation(&self, op: &Operator) -> Result<C64>;
}

impl Expectation for DensityOp {
    /// `tr[ρ·op]`.
    fn expectation(&self, op: &Operator) -> Result<C64> {
        check_dims(self.dim(), op.dim())?;
        Ok(trace_product(&self.0, &op.0))
    }
}

impl Expectation for Ket {
    /// `⟨ψ|op|ψ⟩`.
    fn expectation(&self, op: &Operator) -> Result<C64> {
        check_dims(self.dim(), op.dim())?;
        Ok(self.0.dotc(&(&op.0 * &self.0)))
    }
}

pub fn expectation<S: Expectation + ?Sized>(state: &S, op: &Operator) -> Result<C64> {
    state.expectation(op)
}

/// Coherent state `|α⟩` truncated to `dim` levels and renormalized.
///
/// Fails when the discarded Poisson tail exceeds `1e-8` or the retained top
/// level carries more than `1e-6` of the population.
pub fn coherent_ket(alpha: C64, dim: usize) -> Result<Ket> {
    if dim == 0 {
        return Err(Error::InvalidDimension(
            "coherent state needs dim >= 1".into(),
        ));
    }
    let mut amps = CVector::zeros(dim);
    let mut c = C64::new((-0.5 * alpha.norm_sqr()).exp(), 0.0);
    amps[0] = c;
    for n in 1..dim {
        c = c * alpha / (n as f64).sqrt();
        amps[n] = c;
    }
    let kept: f64 = amps.iter().map(|z| z.norm_sqr()).sum();
    let tail = 1.0 - kept;
    let top = amps[dim - 1].norm_sqr() / kept;
    if tail > 1e-8 || top > 1e-6 {
        return Err(Error::Truncation(format!(
            "coherent state |α|={:.4} needs more than {dim} levels (tail {tail:.2e}, top {top:.2e})",
            alpha.norm()
        )));
    }
    Ket::from_amplitudes(amps)?.normalized()
}

/// Smallest `dim` for which [`coherent_ket`] accepts `|α| = amplitude`.
pub fn coherent_dim_required(amplitude: f64) -> usize {
    (1..=400)
        .find(|&d| coherent_ket(C64::new(amplitude, 0.0), d).is_ok())
        .unwrap_or(usize::MAX)
}

/// Severity of a top-level population.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TruncationStatus {
    Ok,
    Warning,
    Error,
}

impl TruncationStatus {
    pub fn classify(top_population: f64) -> Self {
        if top_population > TRUNCATION_ERROR {
            Self::Error
        } else if top_population > TRUNCATION_WARNING {
            Self::Warning
        } else {
            Self::Ok
        }
    }
}

pub(crate) fn top_level_population(m: &CMatrix, layout: &ModeLayout, slot: Slot) -> Result<f64> {
    check_dims(layout.total_dim(), m.nrows())?;
    let (stride, d) = layout.stride_of(slot)?;
    Ok((0..m.nrows())
        .filter(|&i| (i / stride) % d == d - 1)
        .map(|i| m[(i, i)].re)
        .sum())
}

pub(crate) fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("dimension {a} != {b}")));
    }
    Ok(())
}

/// `tr[a·b]` without forming the product.
pub(crate) fn trace_product(a: &CMatrix, b: &CMatrix) -> C64 {
    let n = a.nrows();
    let mut acc = ZERO;
    for i in 0..n {
        for k in 0..n {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

pub(crate) fn hermiticity_residue(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in 0..=j {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub(crate) fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

pub(crate) fn min_eigenvalue(m: &CMatrix) -> f64 {
    let herm = (m + m.adjoint()) * C64::new(0.5, 0.0);
    herm.symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}
