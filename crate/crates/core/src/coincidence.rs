//! The coincidence counter: pairs signal and idler detections by timing.

use serde::{Deserialize, Serialize};

use crate::amplitude::IdlerDetector;
use crate::engine::EventLog;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceWindow {
    pub expected_offset_ns: f64,
    pub half_width_ns: f64,
}

impl Default for CoincidenceWindow {
    fn default() -> Self {
        CoincidenceWindow {
            expected_offset_ns: 8.0,
            half_width_ns: 1.0,
        }
    }
}

impl CoincidenceWindow {
    pub fn new(expected_offset_ns: f64, half_width_ns: f64) -> Result<Self> {
        if !(half_width_ns > 0.0 && half_width_ns < expected_offset_ns && expected_offset_ns.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "coincidence window needs 0 < half width ({half_width_ns}) < offset ({expected_offset_ns})"
            )));
        }
        Ok(CoincidenceWindow {
            expected_offset_ns,
            half_width_ns,
        })
    }

    fn bounds_ps(&self) -> (i128, i128) {
        let offset = (self.expected_offset_ns * 1000.0).round() as i128;
        let half = (self.half_width_ns * 1000.0).round() as i128;
        (offset - half, offset + half)
    }
}

/// A signal paired with an idler click.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coincidence {
    pub signal_pair: u64,
    pub idler_pair: u64,
    pub detector: IdlerDetector,
    pub u_signal: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceResult {
    pub matches: Vec<Coincidence>,
    pub unmatched_signals: Vec<u64>,
    pub unmatched_idlers: Vec<u64>,
}

impl CoincidenceResult {
    /// Matches whose signal and idler came from different pairs.
    pub fn mismatched(&self) -> usize {
        self.matches.iter().filter(|m| m.signal_pair != m.idler_pair).count()
    }

    pub fn matched_fraction(&self) -> f64 {
        let signals = self.matches.len() + self.unmatched_signals.len();
        if signals == 0 {
            1.0
        } else {
            self.matches.len() as f64 / signals as f64
        }
    }
}

/// Greedy one-to-one matching in time order: each signal, earliest first,
/// takes the earliest unclaimed idler with
/// `|t_idler - t_signal - offset| <= half_width`.
pub fn gate_coincidences(log: &EventLog, window: &CoincidenceWindow) -> Result<CoincidenceResult> {
    log.ensure_resolved()?;
    let (lo_off, hi_off) = window.bounds_ps();

    let mut signals: Vec<(u64, u64, f64)> = log
        .events
        .iter()
        .map(|e| (e.t_signal.picos(), e.pair_id, e.u_signal))
        .collect();
    signals.sort_by_key(|&(t, id, _)| (t, id));
    let mut idlers: Vec<(u64, u64, IdlerDetector)> = log
        .events
        .iter()
        .map(|e| {
            (
                e.t_idler.expect("resolved").picos(),
                e.pair_id,
                e.idler_detector.expect("resolved"),
            )
        })
        .collect();
    idlers.sort_by_key(|&(t, id, _)| (t, id));

    let mut result = CoincidenceResult::default();
    let mut next = 0;
    for &(t_s, signal_pair, u_signal) in &signals {
        let lo = t_s as i128 + lo_off;
        let hi = t_s as i128 + hi_off;
        // Idlers before this window are before every later window too.
        while next < idlers.len() && (idlers[next].0 as i128) < lo {
            result.unmatched_idlers.push(idlers[next].1);
            next += 1;
        }
        match idlers.get(next) {
            Some(&(t_i, idler_pair, detector)) if t_i as i128 <= hi => {
                result.matches.push(Coincidence {
                    signal_pair,
                    idler_pair,
                    detector,
                    u_signal,
                });
                next += 1;
            }
            _ => result.unmatched_signals.push(signal_pair),
        }
    }
    result.unmatched_idlers.extend(idlers[next..].iter().map(|i| i.1));
    Ok(result)
}
