//! Binned D0 counts, optionally gated on an idler detector.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::amplitude::IdlerDetector;
use crate::coincidence::CoincidenceResult;
use crate::engine::EventLog;
use crate::error::{Error, Result};
use crate::numerics::simpson;

/// Uniform bins over `[-range, range]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Binning {
    pub range: f64,
    pub bins: usize,
}

impl Binning {
    pub fn new(range: f64, bins: usize) -> Result<Self> {
        if bins < 2 {
            return Err(Error::InvalidConfig(format!("need at least 2 bins, got {bins}")));
        }
        if !(range.is_finite() && range > 0.0) {
            return Err(Error::InvalidConfig(format!("invalid histogram range {range}")));
        }
        Ok(Binning { range, bins })
    }

    pub fn width(&self) -> f64 {
        2.0 * self.range / self.bins as f64
    }

    pub fn edge(&self, i: usize) -> f64 {
        if i == self.bins {
            self.range
        } else {
            -self.range + i as f64 * self.width()
        }
    }

    pub fn edges(&self) -> Vec<f64> {
        (0..=self.bins).map(|i| self.edge(i)).collect()
    }

    pub fn centre(&self, i: usize) -> f64 {
        0.5 * (self.edge(i) + self.edge(i + 1))
    }

    /// Bin holding `u`; the upper edge belongs to the last bin.
    pub fn index(&self, u: f64) -> Option<usize> {
        if !(u.abs() <= self.range) {
            return None;
        }
        let i = ((u + self.range) / self.width()).floor() as usize;
        Some(i.min(self.bins - 1))
    }

    /// Per-bin integrals of `density` by Simpson's rule.
    pub fn integrate_bins(&self, density: impl Fn(f64) -> f64) -> Vec<f64> {
        (0..self.bins)
            .map(|i| simpson(&density, self.edge(i), self.edge(i + 1), 64))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gate {
    Ungated,
    D1,
    D2,
}

impl Gate {
    pub fn detector(self) -> Option<IdlerDetector> {
        match self {
            Gate::Ungated => None,
            Gate::D1 => Some(IdlerDetector::D1),
            Gate::D2 => Some(IdlerDetector::D2),
        }
    }

    pub fn admits(self, detector: Option<IdlerDetector>) -> bool {
        match self.detector() {
            None => true,
            Some(d) => detector == Some(d),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Gate::Ungated => "ungated",
            Gate::D1 => "d1",
            Gate::D2 => "d2",
        }
    }
}

impl From<IdlerDetector> for Gate {
    fn from(d: IdlerDetector) -> Self {
        match d {
            IdlerDetector::D1 => Gate::D1,
            IdlerDetector::D2 => Gate::D2,
        }
    }
}

impl fmt::Display for Gate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Hex digest identifying the signal record a histogram was filled from.
pub fn signal_fingerprint(log: &EventLog) -> String {
    let mut hasher = Sha256::new();
    for e in &log.events {
        hasher.update(e.pair_id.to_le_bytes());
        hasher.update(e.t_signal.picos().to_le_bytes());
        hasher.update(e.u_signal.to_bits().to_le_bytes());
    }
    hex::encode(&hasher.finalize()[..16])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatedHistogram {
    pub binning: Binning,
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub gate: Gate,
    pub total_events: u64,
    /// See [`signal_fingerprint`].
    pub source: String,
}

impl GatedHistogram {
    pub fn empty(binning: Binning, gate: Gate) -> Self {
        GatedHistogram {
            binning,
            bin_edges: binning.edges(),
            counts: vec![0; binning.bins],
            gate,
            total_events: 0,
            source: String::new(),
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Counts one signal seen together with `detector`.
    pub fn record(&mut self, u: f64, detector: Option<IdlerDetector>) {
        self.total_events += 1;
        if self.gate.admits(detector) {
            if let Some(i) = self.binning.index(u) {
                self.counts[i] += 1;
            }
        }
    }

    pub fn same_binning(&self, other: &GatedHistogram) -> bool {
        self.binning == other.binning
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", self.bin_edges[i], self.bin_edges[i + 1], c);
        }
        out
    }
}

/// Histograms the signal positions of `log`, keeping events whose recorded
/// idler detector passes `gate`.
pub fn histogram(log: &EventLog, gate: Gate, binning: Binning) -> Result<GatedHistogram> {
    if gate != Gate::Ungated {
        log.ensure_resolved()?;
    }
    let mut h = GatedHistogram::empty(binning, gate);
    for e in &log.events {
        h.record(e.u_signal, e.idler_detector);
    }
    h.source = signal_fingerprint(log);
    Ok(h)
}

/// Histograms signals that the coincidence counter paired with an idler
/// passing `gate`. `Gate::Ungated` keeps every matched signal.
pub fn histogram_coincident(
    log: &EventLog,
    coincidences: &CoincidenceResult,
    gate: Gate,
    binning: Binning,
) -> GatedHistogram {
    let mut h = GatedHistogram::empty(binning, gate);
    for m in &coincidences.matches {
        if gate.admits(Some(m.detector)) {
            if let Some(i) = binning.index(m.u_signal) {
                h.counts[i] += 1;
            }
        }
    }
    h.total_events = log.len() as u64;
    h.source = signal_fingerprint(log);
    h
}
