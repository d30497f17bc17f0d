//! Sparse operator action on dense column-major matrices.
//!
//! Model operators (ladder operators, number operators and their products)
//! have O(N) nonzeros while states are dense, so the hot loops apply each
//! operator entry-by-entry instead of forming dense products.

use crate::hilbert::{CMatrix, Operator, C64};

const ZERO: C64 = C64::new(0.0, 0.0);

/// Coordinate list of the nonzero entries of a square operator.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SparseOp {
    n: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl SparseOp {
    pub fn from_dense(m: &CMatrix) -> Self {
        let n = m.nrows();
        let mut s = Self::empty(n);
        for j in 0..n {
            for i in 0..n {
                let v = m[(i, j)];
                if v != ZERO {
                    s.rows.push(i);
                    s.cols.push(j);
                    s.vals.push(v);
                }
            }
        }
        s
    }

    pub fn from_operator(op: &Operator) -> Self {
        Self::from_dense(op.matrix())
    }

    pub fn empty(n: usize) -> Self {
        Self {
            n,
            rows: Vec::new(),
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn values_mut(&mut self) -> &mut [C64] {
        &mut self.vals
    }

    pub fn to_values(&self) -> Vec<C64> {
        self.vals.clone()
    }

    pub fn values(&self) -> &[C64] {
        &self.vals
    }

    pub fn set_values(&mut self, vals: &[C64]) {
        self.vals.copy_from_slice(vals);
    }

    #[cfg(test)]
    pub fn to_dense(&self) -> CMatrix {
        let mut m = CMatrix::zeros(self.n, self.n);
        for k in 0..self.nnz() {
            m[(self.rows[k], self.cols[k])] += self.vals[k];
        }
        m
    }

    fn position(&self, i: usize, j: usize) -> Option<usize> {
        (0..self.nnz()).find(|&k| self.rows[k] == i && self.cols[k] == j)
    }

    /// Index map from the entries of `other` into `self`, extending the
    /// pattern of `self` with zero entries where needed.
    pub fn merge_pattern(&mut self, other: &SparseOp) -> Vec<usize> {
        assert_eq!(self.n, other.n);
        (0..other.nnz())
            .map(|k| {
                let (i, j) = (other.rows[k], other.cols[k]);
                self.position(i, j).unwrap_or_else(|| {
                    self.rows.push(i);
                    self.cols.push(j);
                    self.vals.push(ZERO);
                    self.nnz() - 1
                })
            })
            .collect()
    }

    pub fn adjoint(&self) -> Self {
        Self {
            n: self.n,
            rows: self.cols.clone(),
            cols: self.rows.clone(),
            vals: self.vals.iter().map(|v| v.conj()).collect(),
        }
    }

    /// Strided action on a vector: `out[i·s + a] += c · A_ij · x[j·s + b]`.
    pub fn vec_acc(&self, out: &mut [C64], c: C64, x: &[C64], s: usize, a: usize, b: usize) {
        for k in 0..self.nnz() {
            out[self.rows[k] * s + a] += c * self.vals[k] * x[self.cols[k] * s + b];
        }
    }

    /// Strided adjoint action: `out[i·s + a] += c · (A†)_ij · x[j·s + b]`.
    pub fn vec_adj_acc(&self, out: &mut [C64], c: C64, x: &[C64], s: usize, a: usize, b: usize) {
        for k in 0..self.nnz() {
            out[self.cols[k] * s + a] += c * self.vals[k].conj() * x[self.rows[k] * s + b];
        }
    }

    /// `out += c · A · x`
    pub fn lmul_acc(&self, out: &mut CMatrix, c: C64, x: &CMatrix) {
        let n = self.n;
        let xs = x.as_slice();
        let os = out.as_mut_slice();
        let v: Vec<C64> = self.vals.iter().map(|z| c * z).collect();
        for (oc, xc) in os.chunks_exact_mut(n).zip(xs.chunks_exact(n)) {
            for ((&i, &kk), v) in self.rows.iter().zip(&self.cols).zip(&v) {
                oc[i] += v * xc[kk];
            }
        }
    }

    /// `out += c · A† · x`
    pub fn lmul_adj_acc(&self, out: &mut CMatrix, c: C64, x: &CMatrix) {
        let n = self.n;
        let xs = x.as_slice();
        let os = out.as_mut_slice();
        let v: Vec<C64> = self.vals.iter().map(|z| c * z.conj()).collect();
        for (oc, xc) in os.chunks_exact_mut(n).zip(xs.chunks_exact(n)) {
            for ((&i, &kk), v) in self.cols.iter().zip(&self.rows).zip(&v) {
                oc[i] += v * xc[kk];
            }
        }
    }

    /// `out += c · x · A`
    pub fn rmul_acc(&self, out: &mut CMatrix, c: C64, x: &CMatrix) {
        let n = self.n;
        let xs = x.as_slice();
        let os = out.as_mut_slice();
        for k in 0..self.nnz() {
            let v = c * self.vals[k];
            let (src, dst) = (self.rows[k] * n, self.cols[k] * n);
            for (o, x) in os[dst..dst + n].iter_mut().zip(&xs[src..src + n]) {
                *o += v * x;
            }
        }
    }

    /// `out += c · x · A†`
    pub fn rmul_adj_acc(&self, out: &mut CMatrix, c: C64, x: &CMatrix) {
        let n = self.n;
        let xs = x.as_slice();
        let os = out.as_mut_slice();
        for k in 0..self.nnz() {
            let v = c * self.vals[k].conj();
            let (src, dst) = (self.cols[k] * n, self.rows[k] * n);
            for (o, x) in os[dst..dst + n].iter_mut().zip(&xs[src..src + n]) {
                *o += v * x;
            }
        }
    }

    /// `tr(A · x)`
    pub fn trace_mul(&self, x: &CMatrix) -> C64 {
        let n = self.n;
        let xs = x.as_slice();
        let mut acc = ZERO;
        for k in 0..self.nnz() {
            acc += self.vals[k] * xs[self.cols[k] + self.rows[k] * n];
        }
        acc
    }

    /// `tr(A† · x)`
    pub fn trace_adj_mul(&self, x: &CMatrix) -> C64 {
        let n = self.n;
        let xs = x.as_slice();
        let mut acc = ZERO;
        for k in 0..self.nnz() {
            acc += self.vals[k].conj() * xs[self.rows[k] + self.cols[k] * n];
        }
        acc
    }
}

/// `y += c · x` over matrix storage.
pub(crate) fn axpy(y: &mut CMatrix, c: C64, x: &CMatrix) {
    for (a, b) in y.as_mut_slice().iter_mut().zip(x.as_slice()) {
        *a += c * b;
    }
}

/// `y += c · x†`
pub(crate) fn axpy_adj(y: &mut CMatrix, c: C64, x: &CMatrix) {
    let n = y.nrows();
    let xs = x.as_slice();
    let ys = y.as_mut_slice();
    for j in 0..n {
        for i in 0..n {
            ys[i + j * n] += c * xs[j + i * n].conj();
        }
    }
}

/// `y += x + x†`
pub(crate) fn add_hermitian_part(y: &mut CMatrix, x: &CMatrix) {
    axpy(y, C64::new(1.0, 0.0), x);
    axpy_adj(y, C64::new(1.0, 0.0), x);
}

pub(crate) fn scale(y: &mut CMatrix, c: f64) {
    for a in y.as_mut_slice() {
        *a *= c;
    }
}

pub(crate) fn is_zero(m: &CMatrix) -> bool {
    m.as_slice().iter().all(|z| *z == ZERO)
}

pub(crate) fn trace(m: &CMatrix) -> C64 {
    let n = m.nrows();
    let s = m.as_slice();
    (0..n).map(|i| s[i + i * n]).sum()
}

/// Writes `x†` into `out`.
pub(crate) fn adjoint_into(out: &mut CMatrix, x: &CMatrix) {
    let n = x.nrows();
    let xs = x.as_slice();
    let os = out.as_mut_slice();
    for j in 0..n {
        for i in 0..n {
            os[i + j * n] = xs[j + i * n].conj();
        }
    }
}
