//! Text event logs.
//!
//! ```text
//! #qeraser-events v1
//! pair_id,t_signal_ns,u_signal,bs_in,idler_detector,t_idler_ns
//! 0,1021.345,0.123456789,1,D1,1029.345
//! 1,2210.002,-1.50003121,?,?,?
//! #checkpoint {"version":1,...}
//! #sha256 <hex digest of every preceding byte>
//! ```
//!
//! Times are nanoseconds with exactly three decimals, positions carry nine
//! significant digits, `?` marks a pending field. The `#checkpoint` line is
//! present only in phase-1 logs. Every line ends in `\n`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::amplitude::IdlerDetector;
use crate::engine::{BiphotonEvent, Checkpoint, EventLog, PartialLog, TimeTag};
use crate::error::{Error, Result};

pub const FORMAT_LINE: &str = "#qeraser-events v1";
pub const COLUMNS: &str = "pair_id,t_signal_ns,u_signal,bs_in,idler_detector,t_idler_ns";
const CHECKPOINT_PREFIX: &str = "#checkpoint ";
const CHECKSUM_PREFIX: &str = "#sha256 ";

/// Nine-significant-digit decimal text for a (quantized) position.
pub fn format_position(u: f64) -> String {
    if u == 0.0 {
        return "0.00000000".to_string();
    }
    let sci = format!("{u:.8e}");
    let exponent: i32 = sci[sci.find('e').expect("scientific format") + 1..]
        .parse()
        .expect("exponent parses");
    let decimals = (8 - exponent).max(0) as usize;
    format!("{u:.decimals$}")
}

fn push_record(out: &mut String, e: &BiphotonEvent) {
    let bs = match e.bs_in {
        Some(true) => "1",
        Some(false) => "0",
        None => "?",
    };
    let det = e.idler_detector.map_or("?", IdlerDetector::label);
    let _ = write!(
        out,
        "{},{},{},{},{},",
        e.pair_id,
        e.t_signal,
        format_position(e.u_signal),
        bs,
        det
    );
    match e.t_idler {
        Some(t) => {
            let _ = writeln!(out, "{t}");
        }
        None => out.push_str("?\n"),
    }
}

fn encode(log: &EventLog, checkpoint: Option<&Checkpoint>) -> Vec<u8> {
    let mut out = String::with_capacity(64 * (log.len() + 4));
    out.push_str(FORMAT_LINE);
    out.push('\n');
    out.push_str(COLUMNS);
    out.push('\n');
    for e in &log.events {
        push_record(&mut out, e);
    }
    if let Some(cp) = checkpoint {
        out.push_str(CHECKPOINT_PREFIX);
        out.push_str(&serde_json::to_string(cp).expect("checkpoint serializes"));
        out.push('\n');
    }
    let digest = hex::encode(Sha256::digest(out.as_bytes()));
    out.push_str(CHECKSUM_PREFIX);
    out.push_str(&digest);
    out.push('\n');
    out.into_bytes()
}

/// `pair_id,t_signal_ns,u_signal` lines: the part of a log the splitter
/// choice must never touch.
pub fn signal_columns(log: &EventLog) -> Vec<u8> {
    let mut out = String::with_capacity(40 * log.len());
    for e in &log.events {
        let _ = writeln!(out, "{},{},{}", e.pair_id, e.t_signal, format_position(e.u_signal));
    }
    out.into_bytes()
}

fn parse_time(field: &str, line: usize) -> Result<TimeTag> {
    let bad = || Error::format(line, format!("bad time {field:?}"));
    let (whole, frac) = field.split_once('.').ok_or_else(bad)?;
    if frac.len() != 3 || whole.is_empty() || !whole.bytes().chain(frac.bytes()).all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    let whole: u64 = whole.parse().map_err(|_| bad())?;
    let frac: u64 = frac.parse().map_err(|_| bad())?;
    whole
        .checked_mul(1000)
        .and_then(|w| w.checked_add(frac))
        .map(TimeTag)
        .ok_or_else(bad)
}

fn parse_record(text: &str, line: usize) -> Result<BiphotonEvent> {
    let fields: Vec<&str> = text.split(',').collect();
    if fields.len() != 6 {
        return Err(Error::format(line, format!("expected 6 fields, found {}", fields.len())));
    }
    let pair_id = fields[0]
        .parse()
        .map_err(|_| Error::format(line, format!("bad pair_id {:?}", fields[0])))?;
    let t_signal = parse_time(fields[1], line)?;
    let u_signal: f64 = fields[2]
        .parse()
        .map_err(|_| Error::format(line, format!("bad u_signal {:?}", fields[2])))?;
    if !u_signal.is_finite() || format_position(u_signal) != fields[2] {
        return Err(Error::format(line, format!("non-canonical u_signal {:?}", fields[2])));
    }
    let bs_in = match fields[3] {
        "1" => Some(true),
        "0" => Some(false),
        "?" => None,
        other => return Err(Error::format(line, format!("bad bs_in {other:?}"))),
    };
    let idler_detector = match fields[4] {
        "D1" => Some(IdlerDetector::D1),
        "D2" => Some(IdlerDetector::D2),
        "?" => None,
        other => return Err(Error::format(line, format!("bad idler_detector {other:?}"))),
    };
    let t_idler = match fields[5] {
        "?" => None,
        f => Some(parse_time(f, line)?),
    };
    if idler_detector.is_some() != t_idler.is_some() {
        return Err(Error::format(line, "idler detector and time must both be set or both pending"));
    }
    if idler_detector.is_some() && bs_in.is_none() {
        return Err(Error::format(line, "resolved idler with undecided beam splitter"));
    }
    Ok(BiphotonEvent {
        pair_id,
        u_signal,
        t_signal,
        bs_in,
        idler_detector,
        t_idler,
    })
}

fn decode(bytes: &[u8]) -> Result<(EventLog, Option<Checkpoint>)> {
    let text = std::str::from_utf8(bytes).map_err(|_| Error::format(0, "not UTF-8"))?;
    if !text.ends_with('\n') {
        return Err(Error::format(0, "missing trailing newline"));
    }
    let body_end = text[..text.len() - 1]
        .rfind('\n')
        .map(|i| i + 1)
        .ok_or_else(|| Error::format(0, "missing checksum line"))?;
    let (body, last) = text.split_at(body_end);
    let expected = last
        .trim_end_matches('\n')
        .strip_prefix(CHECKSUM_PREFIX)
        .ok_or_else(|| Error::format(0, "missing checksum line"))?;
    let computed = hex::encode(Sha256::digest(body.as_bytes()));
    if expected != computed {
        return Err(Error::Checksum {
            expected: expected.to_string(),
            computed,
        });
    }

    let mut lines = body.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, FORMAT_LINE)) => {}
        Some((_, other)) => {
            return Err(Error::Version {
                what: "event log",
                found: other.to_string(),
                expected: FORMAT_LINE.to_string(),
            })
        }
        None => return Err(Error::format(1, "empty log")),
    }
    match lines.next() {
        Some((_, COLUMNS)) => {}
        _ => return Err(Error::format(2, "missing or wrong column header")),
    }

    let mut events: Vec<BiphotonEvent> = Vec::new();
    let mut checkpoint = None;
    let mut offset: Option<u64> = None;
    for (no, line) in lines {
        if let Some(json) = line.strip_prefix(CHECKPOINT_PREFIX) {
            if checkpoint.is_some() {
                return Err(Error::format(no, "duplicate checkpoint"));
            }
            let cp: Checkpoint = serde_json::from_str(json)
                .map_err(|e| Error::format(no, format!("bad checkpoint: {e}")))?;
            checkpoint = Some(cp);
            continue;
        }
        if checkpoint.is_some() {
            return Err(Error::format(no, "record after checkpoint"));
        }
        let e = parse_record(line, no)?;
        if let Some(prev) = events.last() {
            if e.pair_id <= prev.pair_id {
                return Err(Error::format(no, "pair_ids not strictly increasing"));
            }
            if e.t_signal < prev.t_signal {
                return Err(Error::format(no, "signal times decrease"));
            }
        }
        if let Some(t) = e.t_idler {
            let d = t
                .picos()
                .checked_sub(e.t_signal.picos())
                .ok_or_else(|| Error::format(no, "idler detected before signal"))?;
            match offset {
                None => offset = Some(d),
                Some(o) if o != d => {
                    return Err(Error::format(no, "idler delay differs between records"))
                }
                _ => {}
            }
        }
        events.push(e);
    }
    let log = EventLog { events };
    if checkpoint.is_none() && !log.is_resolved() {
        return Err(Error::format(0, "pending fields in a log without checkpoint"));
    }
    if checkpoint.is_some() && log.events.iter().any(|e| e.is_resolved() || e.bs_in.is_some()) {
        return Err(Error::format(0, "phase-1 log contains resolved records"));
    }
    Ok((log, checkpoint))
}

impl EventLog {
    /// Serializes a resolved log.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.ensure_resolved()?;
        Ok(encode(self, None))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        match decode(bytes)? {
            (log, None) => Ok(log),
            (_, Some(_)) => Err(Error::format(0, "expected a resolved log, found a phase-1 checkpoint")),
        }
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        EventLog::from_bytes(&bytes)
    }
}

impl PartialLog {
    pub fn to_bytes(&self) -> Vec<u8> {
        encode(&self.log, Some(&self.checkpoint))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        match decode(bytes)? {
            (log, Some(checkpoint)) => Ok(PartialLog { log, checkpoint }),
            (_, None) => Err(Error::format(0, "missing checkpoint footer")),
        }
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        PartialLog::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::amplitude::ApparatusConfig;
    use crate::engine::{quantize_position, run_experiment, run_signal_phase, DelayedChoicePolicy, RunConfig};
    use proptest::prelude::*;

    fn small(policy: DelayedChoicePolicy) -> RunConfig {
        RunConfig::new(ApparatusConfig::default(), 500, 21, policy)
    }

    #[test]
    fn position_text() {
        assert_eq!(format_position(0.0), "0.00000000");
        assert_eq!(format_position(quantize_position(0.123456789012)), "0.123456789");
        assert_eq!(format_position(quantize_position(-4.5)), "-4.50000000");
        assert_eq!(format_position(quantize_position(5e-7)), "0.000000500000000");
    }

    #[test]
    fn resolved_round_trip_is_byte_identical() {
        let log = run_experiment(&small(DelayedChoicePolicy::AlwaysIn)).unwrap();
        let bytes = log.to_bytes().unwrap();
        let back = EventLog::from_bytes(&bytes).unwrap();
        assert_eq!(back, log);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.lines().nth(1).unwrap() == COLUMNS);
    }

    #[test]
    fn partial_round_trip_keeps_checkpoint() {
        let partial = run_signal_phase(&small(DelayedChoicePolicy::Deferred)).unwrap();
        let bytes = partial.to_bytes();
        let back = PartialLog::from_bytes(&bytes).unwrap();
        assert_eq!(back, partial);
        assert!(String::from_utf8(bytes.clone()).unwrap().contains(",?,?,?\n"));
        assert!(EventLog::from_bytes(&bytes).is_err());
    }

    #[test]
    fn corruption_is_detected() {
        let log = run_experiment(&small(DelayedChoicePolicy::AlwaysOut)).unwrap();
        let mut bytes = log.to_bytes().unwrap();
        let i = bytes.len() / 2;
        bytes[i] = if bytes[i] == b'1' { b'2' } else { b'1' };
        assert!(matches!(EventLog::from_bytes(&bytes), Err(Error::Checksum { .. })));
        assert!(EventLog::from_bytes(b"").is_err());
        assert!(EventLog::from_bytes(b"junk\n").is_err());
    }

    fn seal(body: &str) -> Vec<u8> {
        let digest = hex::encode(Sha256::digest(body.as_bytes()));
        format!("{body}#sha256 {digest}\n").into_bytes()
    }

    #[test]
    fn structural_checks() {
        let head = format!("{FORMAT_LINE}\n{COLUMNS}\n");
        let unsorted = format!("{head}1,10.000,0.500000000,1,D1,18.000\n0,11.000,0.500000000,1,D1,19.000\n");
        assert!(EventLog::from_bytes(&seal(&unsorted)).is_err());
        let skewed = format!("{head}0,10.000,0.500000000,1,D1,18.000\n1,11.000,0.500000000,1,D2,20.000\n");
        assert!(EventLog::from_bytes(&seal(&skewed)).is_err());
        let pending = format!("{head}0,10.000,0.500000000,?,?,?\n");
        assert!(EventLog::from_bytes(&seal(&pending)).is_err());
        let version = format!("#qeraser-events v9\n{COLUMNS}\n");
        assert!(matches!(EventLog::from_bytes(&seal(&version)), Err(Error::Version { .. })));
        let ok = format!("{head}0,10.000,0.500000000,1,D1,18.000\n1,10.000,-0.250000000,0,D2,18.000\n");
        let log = EventLog::from_bytes(&seal(&ok)).unwrap();
        assert_eq!(log.len(), 2);
        let empty = EventLog::from_bytes(&seal(&head)).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn file_errors_carry_path() {
        let err = EventLog::read_file("/nonexistent/dir/events.csv").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dir/events.csv"));
    }

    proptest! {
        #[test]
        fn position_text_round_trips(u in -5.0f64..5.0) {
            let q = quantize_position(u);
            let text = format_position(q);
            let back: f64 = text.parse().unwrap();
            prop_assert_eq!(back.to_bits(), q.to_bits());
            let digits = text.bytes().filter(|b| b.is_ascii_digit()).skip_while(|&b| b == b'0').count();
            prop_assert!(digits == 9 || q == 0.0, "{} has {} significant digits", text, digits);
        }
    }
}
