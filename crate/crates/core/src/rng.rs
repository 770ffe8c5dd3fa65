//! Seeded substreams.
//!
//! Every run seed is expanded into a ChaCha20 key as
//! `SHA-256("qeraser/v1" || seed.to_le_bytes())`. Each consumer of randomness
//! then reads its own ChaCha stream id under that key, so the streams are
//! disjoint and a change in how one is consumed cannot shift another.
//! Event `i` always reads the single 64-bit word at position `i` of each
//! stream, which makes any range of events reproducible in isolation.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use sha2::{Digest, Sha256};

/// ChaCha stream ids used by the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamTag {
    SignalPosition = 1,
    Interarrival = 2,
    IdlerOutcome = 3,
}

impl StreamTag {
    pub fn id(self) -> u64 {
        self as u64
    }
}

pub fn seed_key(seed: u64) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(b"qeraser/v1");
    hasher.update(seed.to_le_bytes());
    hasher.finalize().into()
}

/// A positionable uniform stream.
#[derive(Debug, Clone)]
pub struct Substream {
    rng: ChaCha20Rng,
}

impl Substream {
    pub fn new(seed: u64, tag: StreamTag) -> Self {
        Self::from_parts(seed, tag.id(), 0)
    }

    /// Rebuilds a stream from checkpointed state.
    pub fn from_parts(seed: u64, stream_id: u64, draw_index: u64) -> Self {
        let mut rng = ChaCha20Rng::from_seed(seed_key(seed));
        rng.set_stream(stream_id);
        rng.set_word_pos(2 * draw_index as u128);
        Substream { rng }
    }

    pub fn stream_id(&self) -> u64 {
        self.rng.get_stream()
    }

    /// Index of the next 64-bit draw.
    pub fn draw_index(&self) -> u64 {
        (self.rng.get_word_pos() / 2) as u64
    }

    pub fn seek(&mut self, draw_index: u64) {
        self.rng.set_word_pos(2 * draw_index as u128);
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn next_unit(&mut self) -> f64 {
        unit_from_bits(self.next_u64())
    }
}

pub fn unit_from_bits(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
