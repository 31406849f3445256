//! Fixtures shared by the criterion benchmarks: deterministic batches at
//! the standard measurement sizes, one per mechanism family.

use psla_core::attention::{AttentionBatch, HeadConfig};
use psla_core::bench::gen_batch;

pub const BENCH_SEED: u64 = 2024;

/// Batch, head, and grid factorization for one benchmark size.
pub struct Fixture {
    pub batch: AttentionBatch,
    pub head: HeadConfig,
    pub grid: (usize, usize),
}

pub fn fixture(l: usize, d: usize) -> Fixture {
    let (batch, grid) = gen_batch(l, d, BENCH_SEED);
    Fixture {
        batch,
        head: HeadConfig::default(),
        grid,
    }
}
