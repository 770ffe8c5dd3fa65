//! Tabulated inverse-CDF sampling over `[-U, U]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::GRID_INTERVALS;
use crate::rng::Substream;

/// Allowed deviation of a supplied density's integral from 1.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

/// A cumulative distribution tabulated on a uniform grid.
///
/// The CDF at each node is the running sum of per-interval Simpson
/// integrals (`h/6·(f₀ + 4f½ + f₁)`); inversion is binary search followed by
/// linear interpolation, i.e. a piecewise-constant density per interval.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplerTable {
    nodes: Vec<f64>,
    cdf: Vec<f64>,
    source: String,
    fingerprint: String,
}

impl SamplerTable {
    /// Tabulates `density`, which must be nonnegative on `[-range, range]`
    /// and integrate to 1 there.
    pub fn build<F: Fn(f64) -> f64>(
        density: F,
        range: f64,
        source: impl Into<String>,
        fingerprint: impl Into<String>,
    ) -> Result<Self> {
        if !(range.is_finite() && range > 0.0) {
            return Err(Error::Sampler(format!("invalid range {range}")));
        }
        let n = GRID_INTERVALS;
        let h = 2.0 * range / n as f64;
        let eval = |u: f64| -> Result<f64> {
            let v = density(u);
            if !v.is_finite() || v < 0.0 {
                Err(Error::Sampler(format!("density is {v} at u = {u}")))
            } else {
                Ok(v)
            }
        };

        let node = |k: usize| -range + k as f64 * h;
        let mut cumulative = Vec::with_capacity(n + 1);
        cumulative.push(0.0);
        let mut left = eval(node(0))?;
        let mut acc = 0.0;
        for k in 0..n {
            let mid = eval(node(k) + 0.5 * h)?;
            let right = eval(node(k + 1))?;
            acc += h / 6.0 * (left + 4.0 * mid + right);
            cumulative.push(acc);
            left = right;
        }
        let total = acc;
        if !(total > 0.0) {
            return Err(Error::Sampler("density has zero mass".into()));
        }
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::Sampler(format!(
                "density integrates to {total}, not 1"
            )));
        }

        // Merge nodes where the CDF does not strictly increase. A leading
        // zero-mass stretch keeps its last node, any other flat stretch keeps
        // its first, so sampled values stay out of empty regions up to one
        // grid step.
        let mut nodes: Vec<f64> = Vec::with_capacity(n + 1);
        let mut cdf: Vec<f64> = Vec::with_capacity(n + 1);
        for (k, &c) in cumulative.iter().enumerate() {
            let (x, c) = if k == n { (range, 1.0) } else { (node(k), c / total) };
            match cdf.last() {
                Some(&last) if c <= last => {
                    if last == 0.0 {
                        *nodes.last_mut().expect("nodes and cdf grow together") = x;
                    }
                }
                _ => {
                    nodes.push(x);
                    cdf.push(c);
                }
            }
        }
        if nodes.len() < 2 {
            return Err(Error::Sampler("density mass collapses to a point".into()));
        }
        Ok(SamplerTable {
            nodes,
            cdf,
            source: source.into(),
            fingerprint: fingerprint.into(),
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn lower(&self) -> f64 {
        self.nodes[0]
    }

    pub fn upper(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    /// Tabulated CDF evaluated by linear interpolation.
    pub fn cdf(&self, u: f64) -> f64 {
        if u <= self.lower() {
            return 0.0;
        }
        if u >= self.upper() {
            return 1.0;
        }
        let k = self.nodes.partition_point(|&x| x <= u) - 1;
        let t = (u - self.nodes[k]) / (self.nodes[k + 1] - self.nodes[k]);
        self.cdf[k] + t * (self.cdf[k + 1] - self.cdf[k])
    }

    /// Quantile function for `v ∈ [0, 1]`.
    pub fn inverse_cdf(&self, v: f64) -> f64 {
        let v = v.clamp(0.0, 1.0);
        let last = self.cdf.len() - 1;
        // k: last node with cdf[k] <= v, capped so that k + 1 exists.
        let k = (self.cdf.partition_point(|&c| c <= v)).saturating_sub(1).min(last - 1);
        let (c0, c1) = (self.cdf[k], self.cdf[k + 1]);
        let t = ((v - c0) / (c1 - c0)).clamp(0.0, 1.0);
        self.nodes[k] + t * (self.nodes[k + 1] - self.nodes[k])
    }

    pub fn sample(&self, stream: &mut Substream) -> f64 {
        self.inverse_cdf(stream.next_unit())
    }
}

/// Draws one signal position from `sampler`.
pub fn sample_signal(sampler: &SamplerTable, stream: &mut Substream) -> f64 {
    sampler.sample(stream)
}
