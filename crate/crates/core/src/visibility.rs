//! Fringe visibility by envelope-anchored least squares.
//!
//! Bin counts are modelled as `∫_bin E(u)·(A + B·sin 2πu + C·cos 2πu) du`,
//! with `E` the known envelope of the gate. This is linear in `(A, B, C)` and
//! equivalent to `A·E(u)·(1 + V·sin(2πu + φ))` with `V = √(B²+C²)/A` and
//! `φ = atan2(C, B)`. The fit is reweighted with Pearson weights
//! `1/max(model, 1)` for a few rounds.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::amplitude::{envelope_density, ApparatusConfig};
use crate::error::{Error, Result};
use crate::histogram::GatedHistogram;
use crate::numerics::simpson;

pub const MIN_FIT_COUNTS: u64 = 1000;
const REWEIGHT_ROUNDS: usize = 3;
const PANELS_PER_BIN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisibilityFit {
    /// Visibility clamped to `[0, 1]`.
    pub visibility: f64,
    pub raw_visibility: f64,
    /// Fringe phase `φ` in radians, in `[0, 2π)`.
    pub phase: f64,
    pub amplitude: f64,
    pub visibility_se: f64,
    pub phase_se: f64,
    pub chi_square: f64,
    pub dof: usize,
}

fn solve3(m: [[f64; 3]; 3], rhs: [f64; 3]) -> Option<([f64; 3], [[f64; 3]; 3])> {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if !(det.abs() > 0.0) || !det.is_finite() {
        return None;
    }
    let mut inv = [[0.0; 3]; 3];
    for (i, row) in inv.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            // Cofactor of m[j][i].
            let r: Vec<usize> = (0..3).filter(|&k| k != j).collect();
            let c: Vec<usize> = (0..3).filter(|&k| k != i).collect();
            let minor = m[r[0]][c[0]] * m[r[1]][c[1]] - m[r[0]][c[1]] * m[r[1]][c[0]];
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            *cell = sign * minor / det;
        }
    }
    let x = [0, 1, 2].map(|i| (0..3).map(|j| inv[i][j] * rhs[j]).sum());
    Some((x, inv))
}

/// Fits the fringe model to `h` using `envelope` as the shape `E(u)`.
pub fn fit_visibility(h: &GatedHistogram, envelope: impl Fn(f64) -> f64) -> Result<VisibilityFit> {
    let total = h.total();
    if total < MIN_FIT_COUNTS {
        return Err(Error::LowStatistics {
            total,
            required: MIN_FIT_COUNTS,
        });
    }
    let b = h.binning;
    let design: Vec<[f64; 3]> = (0..b.bins)
        .map(|i| {
            let (lo, hi) = (b.edge(i), b.edge(i + 1));
            [
                simpson(&envelope, lo, hi, PANELS_PER_BIN),
                simpson(|u| envelope(u) * (TAU * u).sin(), lo, hi, PANELS_PER_BIN),
                simpson(|u| envelope(u) * (TAU * u).cos(), lo, hi, PANELS_PER_BIN),
            ]
        })
        .collect();
    let counts: Vec<f64> = h.counts.iter().map(|&c| c as f64).collect();

    let mut weights: Vec<f64> = counts.iter().map(|&c| 1.0 / c.max(1.0)).collect();
    let mut params = [0.0; 3];
    let mut cov = [[0.0; 3]; 3];
    for _ in 0..REWEIGHT_ROUNDS {
        let mut normal = [[0.0; 3]; 3];
        let mut rhs = [0.0; 3];
        for ((row, &c), &w) in design.iter().zip(&counts).zip(&weights) {
            for i in 0..3 {
                rhs[i] += w * row[i] * c;
                for j in 0..3 {
                    normal[i][j] += w * row[i] * row[j];
                }
            }
        }
        let (x, inv) = solve3(normal, rhs).ok_or_else(|| {
            Error::InvalidConfig("visibility fit is singular for this envelope and binning".into())
        })?;
        params = x;
        cov = inv;
        weights = design
            .iter()
            .map(|row| 1.0 / (params[0] * row[0] + params[1] * row[1] + params[2] * row[2]).max(1.0))
            .collect();
    }

    let [a, bs, bc] = params;
    let chi_square = design
        .iter()
        .zip(&counts)
        .map(|(row, &c)| {
            let m = a * row[0] + bs * row[1] + bc * row[2];
            (c - m).powi(2) / m.max(1.0)
        })
        .sum();
    let r = bs.hypot(bc);
    let raw = r / a;
    let phase = bc.atan2(bs).rem_euclid(TAU);
    let (grad_v, grad_phi) = if r > 0.0 {
        (
            [-r / (a * a), bs / (r * a), bc / (r * a)],
            [0.0, -bc / (r * r), bs / (r * r)],
        )
    } else {
        ([0.0; 3], [0.0; 3])
    };
    let quad = |g: [f64; 3]| -> f64 {
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                s += g[i] * cov[i][j] * g[j];
            }
        }
        s.max(0.0).sqrt()
    };
    Ok(VisibilityFit {
        visibility: raw.clamp(0.0, 1.0),
        raw_visibility: raw,
        phase,
        amplitude: a,
        visibility_se: quad(grad_v),
        phase_se: quad(grad_phi),
        chi_square,
        dof: b.bins.saturating_sub(3),
    })
}

/// Visibility of `h` against the analytic envelope of its gate.
pub fn fringe_visibility(h: &GatedHistogram, config: &ApparatusConfig) -> Result<VisibilityFit> {
    let gate = h.gate.detector();
    fit_visibility(h, |u| envelope_density(u, gate, config))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseShift {
    /// `(φ₂ − φ₁)/2π` reduced to `[0, 1)`.
    pub periods: f64,
    pub standard_error: f64,
}

/// Fringe translation of `h2` relative to `h1`, in periods.
pub fn phase_shift_estimate(
    h1: &GatedHistogram,
    h2: &GatedHistogram,
    config: &ApparatusConfig,
) -> Result<PhaseShift> {
    if !h1.same_binning(h2) {
        return Err(Error::BinningMismatch);
    }
    let f1 = fringe_visibility(h1, config)?;
    let f2 = fringe_visibility(h2, config)?;
    Ok(PhaseShift {
        periods: ((f2.phase - f1.phase) / TAU).rem_euclid(1.0),
        standard_error: f1.phase_se.hypot(f2.phase_se) / TAU,
    })
}

/// Distance between two phases on the unit circle of periods.
pub fn circular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}
