//! Reproducible, independent random streams derived from one master seed.
//!
//! Every stream is the ChaCha8 generator keyed by the master seed with its
//! own 64-bit stream id `(domain << 48) | index`, so results never depend on
//! scheduling order or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream families; each gets a disjoint block of stream ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    SteadyState = 1,
    Drift = 2,
    Series = 3,
    Scenario = 4,
    Synthetic = 5,
}

const INDEX_BITS: u32 = 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStreams {
    master: u64,
}

impl SeedStreams {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn stream_id(domain: Domain, index: u64) -> u64 {
        assert!(index < 1 << INDEX_BITS, "stream index out of range");
        ((domain as u64) << INDEX_BITS) | index
    }

    pub fn stream(&self, domain: Domain, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(Self::stream_id(domain, index));
        rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let s = SeedStreams::new(42);
        let a: u64 = s.stream(Domain::SteadyState, 7).random();
        let b: u64 = s.stream(Domain::SteadyState, 7).random();
        let c: u64 = s.stream(Domain::SteadyState, 8).random();
        let d: u64 = s.stream(Domain::Drift, 7).random();
        let e: u64 = SeedStreams::new(43).stream(Domain::SteadyState, 7).random();
        assert_eq!(a, b);
        assert!(a != c && a != d && a != e);
    }
}
