//! Reproducible random streams.
//!
//! Each replication draws from ChaCha8 keyed by the run seed, with the
//! 64-bit stream id derived from `(rep, stream)`. A replication's draws do
//! not depend on which thread runs it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named substreams within one replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Loadings = 0,
    Factors = 1,
    Idiosyncratic = 2,
    Treatment = 3,
    Folds = 4,
}

const STREAMS_PER_REP: u64 = 8;

pub fn substream(seed: u64, rep: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep * STREAMS_PER_REP + stream as u64);
    rng
}
