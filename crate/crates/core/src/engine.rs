//! Seeded generation of timestamped biphoton events.
//!
//! Sampling is factorized as `p(u, det) = p(u) · p(det | u)`: the signal
//! position is drawn from the D0 marginal (identical with and without the
//! beam splitter), and only afterwards is the beam-splitter setting resolved
//! and the idler detector drawn from the conditional law. Signal positions,
//! interarrival gaps and idler outcomes each read their own substream, so
//! the beam-splitter choice can never perturb the signal record.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::amplitude::{idler_d1_probability, ApparatusConfig, DensityModel, IdlerDetector};
use crate::error::{Error, Result};
use crate::rng::{StreamTag, Substream};
use crate::sampler::SamplerTable;

/// Events per parallel work unit.
const CHUNK: usize = 1 << 16;

/// A detection time in integer picoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct TimeTag(pub u64);

impl TimeTag {
    pub fn from_ns(ns: f64) -> Self {
        TimeTag((ns * 1000.0).round() as u64)
    }

    pub fn picos(self) -> u64 {
        self.0
    }

    pub fn as_ns(self) -> f64 {
        self.0 as f64 / 1000.0
    }
}

impl fmt::Display for TimeTag {
    /// Nanoseconds with exactly three decimals.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:03}", self.0 / 1000, self.0 % 1000)
    }
}

impl std::ops::Add for TimeTag {
    type Output = TimeTag;

    fn add(self, rhs: TimeTag) -> TimeTag {
        TimeTag(self.0 + rhs.0)
    }
}

/// Rounds a signal coordinate to the nine significant digits written to
/// event logs, so in-memory and persisted events are bit-identical.
pub fn quantize_position(u: f64) -> f64 {
    format!("{u:.8e}").parse().expect("formatted float parses")
}

/// One entangled pair. Idler fields are `None` while the idler is pending.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiphotonEvent {
    pub pair_id: u64,
    pub u_signal: f64,
    pub t_signal: TimeTag,
    pub bs_in: Option<bool>,
    pub idler_detector: Option<IdlerDetector>,
    pub t_idler: Option<TimeTag>,
}

impl BiphotonEvent {
    pub fn is_resolved(&self) -> bool {
        self.idler_detector.is_some()
    }

    fn pending(pair_id: u64, u_signal: f64, t_signal: TimeTag) -> Self {
        BiphotonEvent {
            pair_id,
            u_signal,
            t_signal,
            bs_in: None,
            idler_detector: None,
            t_idler: None,
        }
    }
}

/// Rule consulted per pair. It sees only the pair id and the signal
/// detection time, never the detected position.
#[derive(Clone)]
pub struct ChoiceRule(Arc<dyn Fn(u64, TimeTag) -> bool + Send + Sync>);

impl ChoiceRule {
    pub fn new(rule: impl Fn(u64, TimeTag) -> bool + Send + Sync + 'static) -> Self {
        ChoiceRule(Arc::new(rule))
    }

    pub fn decide(&self, pair_id: u64, t_signal: TimeTag) -> bool {
        (self.0)(pair_id, t_signal)
    }
}

impl fmt::Debug for ChoiceRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ChoiceRule(..)")
    }
}

#[derive(Debug, Clone)]
pub enum DelayedChoicePolicy {
    AlwaysIn,
    AlwaysOut,
    PerEvent(ChoiceRule),
    /// Decided externally between the signal and idler phases.
    Deferred,
}

impl DelayedChoicePolicy {
    fn name(&self) -> &'static str {
        match self {
            DelayedChoicePolicy::AlwaysIn => "always-in",
            DelayedChoicePolicy::AlwaysOut => "always-out",
            DelayedChoicePolicy::PerEvent(_) => "per-event",
            DelayedChoicePolicy::Deferred => "deferred",
        }
    }

    fn decide(&self, pair_id: u64, t_signal: TimeTag) -> Option<bool> {
        match self {
            DelayedChoicePolicy::AlwaysIn => Some(true),
            DelayedChoicePolicy::AlwaysOut => Some(false),
            DelayedChoicePolicy::PerEvent(rule) => Some(rule.decide(pair_id, t_signal)),
            DelayedChoicePolicy::Deferred => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub apparatus: ApparatusConfig,
    pub n_pairs: u64,
    pub seed: u64,
    pub interarrival_mean_ns: f64,
    pub policy: DelayedChoicePolicy,
}

impl RunConfig {
    pub fn new(apparatus: ApparatusConfig, n_pairs: u64, seed: u64, policy: DelayedChoicePolicy) -> Self {
        RunConfig {
            apparatus,
            n_pairs,
            seed,
            interarrival_mean_ns: 1000.0,
            policy,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.apparatus.validate()?;
        if self.n_pairs == 0 {
            return Err(Error::InvalidConfig("n_pairs must be at least 1".into()));
        }
        if !(self.interarrival_mean_ns.is_finite()
            && self.interarrival_mean_ns > self.apparatus.idler_delay_ns)
        {
            return Err(Error::InvalidConfig(format!(
                "interarrival mean {} ns must exceed the idler delay {} ns",
                self.interarrival_mean_ns, self.apparatus.idler_delay_ns
            )));
        }
        Ok(())
    }
}

/// A sequence of events ordered by `pair_id`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventLog {
    pub events: Vec<BiphotonEvent>,
}

impl EventLog {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn is_resolved(&self) -> bool {
        self.events.iter().all(BiphotonEvent::is_resolved)
    }

    pub fn ensure_resolved(&self) -> Result<()> {
        match self.events.iter().find(|e| !e.is_resolved()) {
            Some(e) => Err(Error::UnresolvedLog(e.pair_id)),
            None => Ok(()),
        }
    }

    pub fn positions(&self) -> impl Iterator<Item = f64> + '_ {
        self.events.iter().map(|e| e.u_signal)
    }
}

/// State needed to resolve a phase-1 log later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub apparatus: ApparatusConfig,
    pub seed: u64,
    pub n_pairs: u64,
    pub interarrival_mean_ns: f64,
    pub idler_stream: u64,
    pub idler_draw_index: u64,
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Phase-1 output: every signal detected, every idler pending.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialLog {
    pub log: EventLog,
    pub checkpoint: Checkpoint,
}

/// Sampling machinery for one apparatus and seed.
#[derive(Debug, Clone)]
pub struct Engine {
    apparatus: ApparatusConfig,
    model: DensityModel,
    sampler: SamplerTable,
    seed: u64,
    interarrival_mean_ns: f64,
}

impl Engine {
    pub fn new(apparatus: &ApparatusConfig, seed: u64, interarrival_mean_ns: f64) -> Result<Self> {
        let model = DensityModel::new(apparatus)?;
        // The marginal does not depend on the splitter, but its rounding does.
        // Tabulate it with a fixed setting so signals depend on geometry and seed only.
        let sampler = build_marginal_sampler(&DensityModel::new(&apparatus.with_beam_splitter(false))?)?;
        Ok(Engine {
            apparatus: *apparatus,
            model,
            sampler,
            seed,
            interarrival_mean_ns,
        })
    }

    pub fn for_run(run: &RunConfig) -> Result<Self> {
        run.validate()?;
        Engine::new(&run.apparatus, run.seed, run.interarrival_mean_ns)
    }

    pub fn apparatus(&self) -> &ApparatusConfig {
        &self.apparatus
    }

    pub fn model(&self) -> &DensityModel {
        &self.model
    }

    pub fn sampler(&self) -> &SamplerTable {
        &self.sampler
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn idler_delay(&self) -> TimeTag {
        TimeTag::from_ns(self.apparatus.idler_delay_ns)
    }

    /// Position and interarrival gap (ps) for pairs `start..end`.
    fn draw_signals(&self, start: u64, end: u64) -> Vec<(f64, u64)> {
        let mut positions = Substream::from_parts(self.seed, StreamTag::SignalPosition.id(), start);
        let mut gaps = Substream::from_parts(self.seed, StreamTag::Interarrival.id(), start);
        let mean_ps = self.interarrival_mean_ns * 1000.0;
        let range = self.apparatus.detector_range;
        (start..end)
            .map(|_| {
                let u = quantize_position(self.sampler.sample(&mut positions)).clamp(-range, range);
                let gap = (-mean_ps * (1.0 - gaps.next_unit()).ln()).round() as u64;
                (u, gap)
            })
            .collect()
    }

    /// All signal detections for pairs `0..n_pairs`, idlers pending.
    pub fn signal_events(&self, n_pairs: u64) -> Vec<BiphotonEvent> {
        let chunks: Vec<(u64, u64)> = (0..n_pairs)
            .step_by(CHUNK)
            .map(|s| (s, (s + CHUNK as u64).min(n_pairs)))
            .collect();
        let drawn: Vec<Vec<(f64, u64)>> = chunks
            .par_iter()
            .map(|&(s, e)| self.draw_signals(s, e))
            .collect();
        let mut t = 0u64;
        let mut events = Vec::with_capacity(n_pairs as usize);
        for (pair_id, (u, gap)) in drawn.into_iter().flatten().enumerate() {
            t += gap;
            events.push(BiphotonEvent::pending(pair_id as u64, u, TimeTag(t)));
        }
        events
    }

    /// Draws the idler detector for a signal at `u` with the splitter set to `bs_in`.
    pub fn sample_idler(&self, u: f64, bs_in: bool, stream: &mut Substream) -> Result<IdlerDetector> {
        sample_idler(u, bs_in, &self.apparatus, stream)
    }

    /// Resolves pending events in place; `choose` gives the splitter setting
    /// for each pair from its id and signal time.
    pub fn resolve(
        &self,
        events: &mut [BiphotonEvent],
        choose: impl Fn(u64, TimeTag) -> bool + Sync,
    ) -> Result<()> {
        let delay = self.idler_delay();
        events.par_chunks_mut(CHUNK).try_for_each(|chunk| {
            let Some(first) = chunk.first() else {
                return Ok(());
            };
            let mut stream =
                Substream::from_parts(self.seed, StreamTag::IdlerOutcome.id(), first.pair_id);
            for event in chunk.iter_mut() {
                stream.seek(event.pair_id);
                let bs = choose(event.pair_id, event.t_signal);
                event.bs_in = Some(bs);
                event.idler_detector = Some(self.sample_idler(event.u_signal, bs, &mut stream)?);
                event.t_idler = Some(event.t_signal + delay);
            }
            Ok(())
        })
    }

    pub fn live(&self) -> LiveGenerator {
        LiveGenerator::new(self.clone())
    }
}

fn build_marginal_sampler(model: &DensityModel) -> Result<SamplerTable> {
    let cfg = model.config();
    let fingerprint = serde_json::to_string(&cfg.with_beam_splitter(false))
        .expect("config serializes");
    SamplerTable::build(
        |u| model.marginal_normalized(u).unwrap_or(0.0),
        cfg.detector_range,
        "marginal_d0",
        fingerprint,
    )
}

/// Bernoulli draw of the idler detector given the signal position.
pub fn sample_idler(
    u: f64,
    bs_in: bool,
    apparatus: &ApparatusConfig,
    stream: &mut Substream,
) -> Result<IdlerDetector> {
    let cfg = apparatus.with_beam_splitter(bs_in);
    let p_d1 = idler_d1_probability(u, &cfg)?;
    Ok(if stream.next_unit() < p_d1 {
        IdlerDetector::D1
    } else {
        IdlerDetector::D2
    })
}

/// Generates and resolves a full run in one pass.
pub fn run_experiment(run: &RunConfig) -> Result<EventLog> {
    if matches!(run.policy, DelayedChoicePolicy::Deferred) {
        return Err(Error::Policy("deferred (use the two-phase API)"));
    }
    let engine = Engine::for_run(run)?;
    let mut events = engine.signal_events(run.n_pairs);
    let policy = &run.policy;
    engine.resolve(&mut events, |id, t| {
        policy.decide(id, t).expect("non-deferred policy decides")
    })?;
    Ok(EventLog { events })
}

/// Phase 1 of a deferred run: detect every signal and checkpoint the idler stream.
pub fn run_signal_phase(run: &RunConfig) -> Result<PartialLog> {
    if !matches!(run.policy, DelayedChoicePolicy::Deferred) {
        return Err(Error::Policy(run.policy.name()));
    }
    let engine = Engine::for_run(run)?;
    let events = engine.signal_events(run.n_pairs);
    Ok(PartialLog {
        log: EventLog { events },
        checkpoint: Checkpoint {
            version: CHECKPOINT_VERSION,
            apparatus: run.apparatus,
            seed: run.seed,
            n_pairs: run.n_pairs,
            interarrival_mean_ns: run.interarrival_mean_ns,
            idler_stream: StreamTag::IdlerOutcome.id(),
            idler_draw_index: 0,
        },
    })
}

/// Phase 2: resolve every pending idler with the same splitter setting.
pub fn run_idler_phase(partial: &PartialLog, choice: bool) -> Result<EventLog> {
    let cp = &partial.checkpoint;
    if cp.version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            what: "checkpoint",
            found: cp.version.to_string(),
            expected: CHECKPOINT_VERSION.to_string(),
        });
    }
    if cp.idler_stream != StreamTag::IdlerOutcome.id() {
        return Err(Error::InvalidConfig(format!(
            "checkpoint names idler stream {}, expected {}",
            cp.idler_stream,
            StreamTag::IdlerOutcome.id()
        )));
    }
    if partial.log.len() as u64 != cp.n_pairs {
        return Err(Error::InvalidConfig(format!(
            "checkpoint expects {} pairs, log holds {}",
            cp.n_pairs,
            partial.log.len()
        )));
    }
    for (i, e) in partial.log.events.iter().enumerate() {
        if e.pair_id != cp.idler_draw_index + i as u64 {
            return Err(Error::InvalidConfig(format!(
                "pair {} out of sequence at position {i}",
                e.pair_id
            )));
        }
        if e.is_resolved() || e.bs_in.is_some() {
            return Err(Error::InvalidConfig(format!(
                "pair {} is already resolved in a phase-1 log",
                e.pair_id
            )));
        }
    }
    let engine = Engine::new(&cp.apparatus, cp.seed, cp.interarrival_mean_ns)?;
    let mut events = partial.log.events.clone();
    engine.resolve(&mut events, |_, _| choice)?;
    Ok(EventLog { events })
}

/// Event-at-a-time generator for interactive use.
///
/// Signals are produced in pair order and resolved later with whatever
/// splitter setting is current at resolution time. Its output matches
/// [`run_experiment`] for the same seed and settings.
#[derive(Debug, Clone)]
pub struct LiveGenerator {
    engine: Engine,
    positions: Substream,
    gaps: Substream,
    idlers: Substream,
    next_pair: u64,
    clock: u64,
}

impl LiveGenerator {
    fn new(engine: Engine) -> Self {
        let seed = engine.seed;
        LiveGenerator {
            engine,
            positions: Substream::new(seed, StreamTag::SignalPosition),
            gaps: Substream::new(seed, StreamTag::Interarrival),
            idlers: Substream::new(seed, StreamTag::IdlerOutcome),
            next_pair: 0,
            clock: 0,
        }
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn pairs_generated(&self) -> u64 {
        self.next_pair
    }

    /// Detects the next signal photon; its idler is still in flight.
    pub fn next_signal(&mut self) -> BiphotonEvent {
        let range = self.engine.apparatus.detector_range;
        let u = quantize_position(self.engine.sampler.sample(&mut self.positions)).clamp(-range, range);
        let mean_ps = self.engine.interarrival_mean_ns * 1000.0;
        self.clock += (-mean_ps * (1.0 - self.gaps.next_unit()).ln()).round() as u64;
        let event = BiphotonEvent::pending(self.next_pair, u, TimeTag(self.clock));
        self.next_pair += 1;
        event
    }

    /// Lands the idler of a pending event with the current splitter setting.
    pub fn resolve(&mut self, mut event: BiphotonEvent, bs_in: bool) -> Result<BiphotonEvent> {
        self.idlers.seek(event.pair_id);
        event.bs_in = Some(bs_in);
        event.idler_detector = Some(self.engine.sample_idler(event.u_signal, bs_in, &mut self.idlers)?);
        event.t_idler = Some(event.t_signal + self.engine.idler_delay());
        Ok(event)
    }
}
