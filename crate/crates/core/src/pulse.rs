//! Single-photon wavepackets.

use std::io::Read;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hilbert::C64;

/// Tolerance of the normalization certificate `∫|ξ|² = 1`.
pub const NORM_TOLERANCE: f64 = 1e-8;

/// `w` below which the sampled ratio `ξ/√w` is regularized to zero.
const RATIO_FLOOR: f64 = 1e-12;

/// Wavepacket `ξ(t)` of the incoming photon.
#[derive(Debug, Clone, PartialEq)]
pub struct Pulse {
    shape: Shape,
    norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
enum Shape {
    /// `√γ e^{−γ(t−t0)/2} Θ(t−t0)`: the photon emitted by a decaying two-level atom.
    Exponential {
        gamma: f64,
        t0: f64,
    },
    Sampled(Samples),
    /// No photon in the input field (`ξ ≡ 0`, `w ≡ 0`).
    Absent,
}

#[derive(Debug, Clone, PartialEq)]
struct Samples {
    times: Vec<f64>,
    xi: Vec<C64>,
    /// Trapezoid integral of `|ξ|²` from `times[k]` to the end of the grid.
    tail: Vec<f64>,
}

/// Short serializable description used in run metadata.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PulseSummary {
    Exponential { gamma: f64, t0: f64 },
    Sampled { points: usize, start: f64, end: f64 },
    Absent,
}

impl Pulse {
    pub fn exponential(gamma: f64, t0: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Pulse(format!("rate must be positive, got {gamma}")));
        }
        if !t0.is_finite() {
            return Err(Error::Pulse("onset time must be finite".into()));
        }
        Ok(Self {
            shape: Shape::Exponential { gamma, t0 },
            norm: 1.0,
        })
    }

    /// Tabulated wavepacket. The trapezoid norm must already be 1 within
    /// [`NORM_TOLERANCE`]; see [`trapezoid_norm`] for rescaling raw samples.
    pub fn sampled(times: Vec<f64>, xi: Vec<C64>) -> Result<Self> {
        if times.len() < 2 || times.len() != xi.len() {
            return Err(Error::Pulse(format!(
                "need at least two samples with matching lengths ({} times, {} values)",
                times.len(),
                xi.len()
            )));
        }
        if times.iter().any(|t| !t.is_finite())
            || xi.iter().any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(Error::Pulse("non-finite sample".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Pulse(
                "sample times must be strictly increasing".into(),
            ));
        }
        let norm = trapezoid_norm(&times, &xi);
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::Pulse(format!(
                "wavepacket norm {norm:.12} differs from 1 by more than {NORM_TOLERANCE:e}"
            )));
        }
        let mut tail = vec![0.0; times.len()];
        for k in (0..times.len() - 1).rev() {
            let h = times[k + 1] - times[k];
            tail[k] = tail[k + 1] + 0.5 * h * (xi[k].norm_sqr() + xi[k + 1].norm_sqr());
        }
        Ok(Self {
            shape: Shape::Sampled(Samples { times, xi, tail }),
            norm,
        })
    }

    pub fn absent() -> Self {
        Self {
            shape: Shape::Absent,
            norm: 0.0,
        }
    }

    /// Loads `t,re_xi[,im_xi]` rows; a non-numeric first row is treated as a header.
    pub fn from_csv_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(file).map_err(|e| match e {
            Error::Csv { source, .. } => Error::Csv {
                path: path.to_path_buf(),
                source,
            },
            other => other,
        })
    }

    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut times = Vec::new();
        let mut xi = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|source| Error::Csv {
                path: "<pulse>".into(),
                source,
            })?;
            let fields: Vec<&str> = rec.iter().collect();
            let parsed: Option<Vec<f64>> = fields.iter().map(|f| f.parse().ok()).collect();
            let Some(vals) = parsed else {
                if row == 0 {
                    continue;
                }
                return Err(Error::Pulse(format!("row {}: non-numeric field", row + 1)));
            };
            match vals.as_slice() {
                [t, re] => {
                    times.push(*t);
                    xi.push(C64::new(*re, 0.0));
                }
                [t, re, im] => {
                    times.push(*t);
                    xi.push(C64::new(*re, *im));
                }
                _ => {
                    return Err(Error::Pulse(format!(
                        "row {}: expected 2 or 3 columns, got {}",
                        row + 1,
                        vals.len()
                    )))
                }
            }
        }
        Self::sampled(times, xi)
    }

    /// `∫|ξ|²` as certified at construction (0 for an absent photon).
    pub fn norm_certificate(&self) -> f64 {
        self.norm
    }

    pub fn is_absent(&self) -> bool {
        matches!(self.shape, Shape::Absent)
    }

    /// Time before which `ξ` vanishes.
    pub fn onset(&self) -> f64 {
        match &self.shape {
            Shape::Exponential { t0, .. } => *t0,
            Shape::Sampled(s) => s.times[0],
            Shape::Absent => f64::INFINITY,
        }
    }

    pub fn summary(&self) -> PulseSummary {
        match &self.shape {
            Shape::Exponential { gamma, t0 } => PulseSummary::Exponential {
                gamma: *gamma,
                t0: *t0,
            },
            Shape::Sampled(s) => PulseSummary::Sampled {
                points: s.times.len(),
                start: s.times[0],
                end: s.times[s.times.len() - 1],
            },
            Shape::Absent => PulseSummary::Absent,
        }
    }

    /// Wavepacket amplitude `ξ(t)`.
    pub fn xi(&self, t: f64) -> C64 {
        match &self.shape {
            Shape::Exponential { gamma, t0 } => {
                if t >= *t0 {
                    C64::new(gamma.sqrt() * (-0.5 * gamma * (t - t0)).exp(), 0.0)
                } else {
                    C64::new(0.0, 0.0)
                }
            }
            Shape::Sampled(s) => s.xi_at(t),
            Shape::Absent => C64::new(0.0, 0.0),
        }
    }

    /// Remaining norm `w(t) = ∫_t^∞ |ξ(s)|² ds`.
    pub fn w(&self, t: f64) -> f64 {
        match &self.shape {
            Shape::Exponential { gamma, t0 } => {
                if t <= *t0 {
                    1.0
                } else {
                    (-gamma * (t - t0)).exp()
                }
            }
            Shape::Sampled(s) => s.w_at(t).clamp(0.0, 1.0),
            Shape::Absent => 0.0,
        }
    }

    /// `ξ(t)/√w(t)`, regularized. For the exponential shape the ratio
    /// cancels analytically to `√γ Θ(t−t0)`.
    pub fn xi_over_sqrt_w(&self, t: f64) -> C64 {
        match &self.shape {
            Shape::Exponential { gamma, t0 } => {
                if t >= *t0 {
                    C64::new(gamma.sqrt(), 0.0)
                } else {
                    C64::new(0.0, 0.0)
                }
            }
            Shape::Sampled(s) => {
                let w = s.w_at(t);
                if w > RATIO_FLOOR {
                    s.xi_at(t) / w.sqrt()
                } else {
                    C64::new(0.0, 0.0)
                }
            }
            Shape::Absent => C64::new(0.0, 0.0),
        }
    }
}

impl Samples {
    /// Index `k` with `times[k] <= t < times[k+1]`, if inside the grid.
    fn segment(&self, t: f64) -> Option<usize> {
        let n = self.times.len();
        if t < self.times[0] || t > self.times[n - 1] {
            return None;
        }
        let k = self.times.partition_point(|&s| s <= t);
        Some(k.saturating_sub(1).min(n - 2))
    }

    fn xi_at(&self, t: f64) -> C64 {
        match self.segment(t) {
            None => C64::new(0.0, 0.0),
            Some(k) => {
                let (t0, t1) = (self.times[k], self.times[k + 1]);
                let f = (t - t0) / (t1 - t0);
                self.xi[k] * (1.0 - f) + self.xi[k + 1] * f
            }
        }
    }

    /// Exact tail integral of the piecewise-linear interpolant of `|ξ|²`,
    /// which coincides with the trapezoid rule on grid points.
    fn w_at(&self, t: f64) -> f64 {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.tail[0];
        }
        if t >= self.times[n - 1] {
            return 0.0;
        }
        let k = self.segment(t).expect("inside grid");
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let (f0, f1) = (self.xi[k].norm_sqr(), self.xi[k + 1].norm_sqr());
        let ft = f0 + (f1 - f0) * (t - t0) / (t1 - t0);
        self.tail[k + 1] + 0.5 * (t1 - t) * (ft + f1)
    }
}

/// Trapezoid estimate of `∫|ξ|² dt` over the sample grid.
pub fn trapezoid_norm(times: &[f64], xi: &[C64]) -> f64 {
    times
        .windows(2)
        .zip(xi.windows(2))
        .map(|(t, x)| 0.5 * (t[1] - t[0]) * (x[0].norm_sqr() + x[1].norm_sqr()))
        .sum()
}
