//! Delayed-choice quantum eraser simulation.
//!
//! [`amplitude`] holds the closed-form detection densities, [`engine`] draws
//! timestamped biphoton events from them, and [`coincidence`],
//! [`histogram`], [`visibility`] and [`stats`] analyse the resulting logs.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Event logs are persisted through [`eventlog`].

pub mod amplitude;
pub mod coincidence;
pub mod engine;
pub mod error;
pub mod eventlog;
pub mod histogram;
pub mod numerics;
pub mod rng;
pub mod sampler;
pub mod stats;
pub mod visibility;

pub use amplitude::{ApparatusConfig, ComplexAmplitude, DensityModel, IdlerDetector, SlitLabel};
pub use coincidence::{gate_coincidences, CoincidenceResult, CoincidenceWindow};
pub use engine::{
    run_experiment, run_idler_phase, run_signal_phase, BiphotonEvent, ChoiceRule, DelayedChoicePolicy,
    Engine, EventLog, PartialLog, RunConfig, TimeTag,
};
pub use error::{Error, Result};
pub use histogram::{histogram, Binning, Gate, GatedHistogram};
pub use stats::{ComparisonReport, Verdict};
pub use visibility::{fringe_visibility, phase_shift_estimate, VisibilityFit};
