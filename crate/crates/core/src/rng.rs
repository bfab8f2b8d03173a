//! Counter-addressed random substreams.
//!
//! Every draw in the engine is taken from a substream addressed by
//! `(seed, experiment, repetition, role, round)`. Two calls with the same
//! address always see the same sequence, independent of which thread runs
//! them or in which order cells of a sweep are evaluated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Who a substream feeds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StreamRole {
    /// Value draws of one coalition member.
    Value(usize),
    /// Highest bid from outside the coalition.
    Outside,
    /// Anything else (budget draws, record splits, ...), keyed by a caller tag.
    Auxiliary(u64),
}

impl StreamRole {
    fn code(self) -> u64 {
        match self {
            StreamRole::Value(k) => k as u64,
            StreamRole::Outside => u64::MAX,
            StreamRole::Auxiliary(tag) => (1 << 62) ^ tag,
        }
    }
}

/// Address of one substream below a base seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SubstreamId {
    pub experiment: u64,
    pub repetition: u64,
    pub role: StreamRole,
    pub round: u64,
}

/// Base seed from which all substreams are derived.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RngStream {
    seed: u64,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Generator for the given substream address.
    pub fn substream(&self, id: SubstreamId) -> ChaCha8Rng {
        let mut state = self.seed;
        for word in [id.experiment, id.repetition, id.role.code()] {
            state = splitmix64(&mut state) ^ word;
        }
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(id.round);
        rng
    }

    /// Shorthand for a substream addressed by its coordinates.
    pub fn at(&self, experiment: u64, repetition: u64, role: StreamRole, round: u64) -> ChaCha8Rng {
        self.substream(SubstreamId {
            experiment,
            repetition,
            role,
            round,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_address_same_sequence() {
        let s = RngStream::new(7);
        let draw = || {
            let mut r = s.at(1, 2, StreamRole::Value(3), 4);
            (0..8).map(|_| r.gen::<u64>()).collect::<Vec<_>>()
        };
        assert_eq!(draw(), draw());
    }

    #[test]
    fn coordinates_separate_streams() {
        let s = RngStream::new(7);
        let first = |id: SubstreamId| s.substream(id).gen::<u64>();
        let base = SubstreamId {
            experiment: 0,
            repetition: 0,
            role: StreamRole::Outside,
            round: 0,
        };
        let variants = [
            SubstreamId { experiment: 1, ..base },
            SubstreamId { repetition: 1, ..base },
            SubstreamId { role: StreamRole::Value(0), ..base },
            SubstreamId { round: 1, ..base },
        ];
        let x = first(base);
        for v in variants {
            assert_ne!(x, first(v), "{v:?}");
        }
        assert_ne!(RngStream::new(8).substream(base).gen::<u64>(), x);
    }
}
