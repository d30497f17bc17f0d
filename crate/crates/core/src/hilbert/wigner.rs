//! Phase-space quasi-probability of a single mode.
//!
//! Convention: `ħ = 1`, `α = (x + ip)/√2`, `W(x, p) = (1/π) tr[ρ D(α) P D(α)†]`
//! with parity `P = (−1)^n`. Then `∫∫ W dx dp = 1` and the vacuum peaks at
//! `1/π`. Since `D(α) P D(α)† = D(2α) P`, the displaced parity is evaluated
//! from exact Fock matrix elements of `D(2α)` (generalized Laguerre
//! polynomials), so no truncated displacement operator is ever formed.

use std::f64::consts::PI;
use std::io::Write;

use serde::Serialize;

use super::{DensityOp, C64};
use crate::error::{Error, Result};
use crate::output::fmt9;

#[derive(Debug, Clone, Serialize)]
pub struct WignerGrid {
    pub xs: Vec<f64>,
    pub ps: Vec<f64>,
    /// Row-major with `p` as the outer index.
    pub values: Vec<f64>,
}

impl WignerGrid {
    pub fn at(&self, ip: usize, ix: usize) -> f64 {
        self.values[ip * self.xs.len() + ix]
    }

    /// Riemann sum over the grid assuming uniform spacing in each axis.
    pub fn integral(&self) -> f64 {
        let step = |v: &[f64]| {
            if v.len() < 2 {
                0.0
            } else {
                (v[v.len() - 1] - v[0]) / (v.len() - 1) as f64
            }
        };
        self.values.iter().sum::<f64>() * step(&self.xs) * step(&self.ps)
    }

    /// CSV with header `x,p,w`, looping over `p` then `x`.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "p", "w"])?;
        for (ip, &p) in self.ps.iter().enumerate() {
            for (ix, &x) in self.xs.iter().enumerate() {
                w.write_record([fmt9(x), fmt9(p), fmt9(self.at(ip, ix))])?;
            }
        }
        w.flush()
    }
}

/// Wigner function of a single-mode state on the grid `xs × ps`.
pub fn wigner(rho: &DensityOp, xs: &[f64], ps: &[f64]) -> Result<WignerGrid> {
    let herm = rho.hermiticity_residue();
    if herm > 1e-10 {
        return Err(Error::Physicality(format!(
            "Wigner input is not Hermitian (residue {herm:.3e})"
        )));
    }
    let tr = rho.trace();
    if (tr.re - 1.0).abs() > 1e-6 {
        return Err(Error::Physicality(format!("Wigner input has trace {tr}")));
    }
    if xs.iter().chain(ps).any(|v| !v.is_finite()) {
        return Err(Error::validation("grid", "non-finite grid point"));
    }

    let d = rho.dim();
    // sqrt(m! / (m+j)!) for all m + j < d.
    let mut ratio = vec![0.0; d * d];
    for m in 0..d {
        let mut r = 1.0;
        for j in 0..d - m {
            if j > 0 {
                r /= ((m + j) as f64).sqrt();
            }
            ratio[m * d + j] = r;
        }
    }

    let m = rho.matrix();
    let mut values = Vec::with_capacity(xs.len() * ps.len());
    let mut laguerre = vec![0.0; d];
    for &p in ps {
        for &x in xs {
            let beta = C64::new(x, p) * std::f64::consts::SQRT_2;
            let y = beta.norm_sqr();
            let mut beta_j = C64::new(1.0, 0.0);
            let mut acc = 0.0;
            for j in 0..d {
                if j > 0 {
                    beta_j *= beta;
                }
                let kmax = d - j;
                generalized_laguerre(kmax, j as f64, y, &mut laguerre);
                for mm in 0..kmax {
                    let n = mm + j;
                    let sign = if mm % 2 == 0 { 1.0 } else { -1.0 };
                    let elem = beta_j * (sign * ratio[mm * d + j] * laguerre[mm]);
                    let term = (m[(mm, n)] * elem).re;
                    acc += if j == 0 { term } else { 2.0 * term };
                }
            }
            values.push(acc * (-0.5 * y).exp() / PI);
        }
    }
    Ok(WignerGrid {
        xs: xs.to_vec(),
        ps: ps.to_vec(),
        values,
    })
}

/// `L_k^{(a)}(y)` for `k = 0..count` by the three-term recurrence.
fn generalized_laguerre(count: usize, a: f64, y: f64, out: &mut [f64]) {
    if count == 0 {
        return;
    }
    out[0] = 1.0;
    if count == 1 {
        return;
    }
    out[1] = 1.0 + a - y;
    for k in 1..count - 1 {
        let kf = k as f64;
        out[k + 1] = ((2.0 * kf + 1.0 + a - y) * out[k] - (kf + a) * out[k - 1]) / (kf + 1.0);
    }
}
