//! Shared fixtures for the benchmarks.

use catwalk::chains::ChainParams;
use catwalk::rng::Stream;
use catwalk::SeedSpec;

pub const SEED: u64 = 0xBE7C;

pub fn stream() -> Stream {
    SeedSpec::new(SEED, 0).stream()
}

/// The parameters of the paper's first figure: metastable level 990.
pub fn figure1() -> ChainParams {
    ChainParams::new(0.99, 0.1).expect("valid parameters")
}
