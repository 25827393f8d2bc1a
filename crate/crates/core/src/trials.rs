//! Per-trial seeding and an order-preserving parallel trial runner.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Identifier of the per-trial seed derivation implemented by [`trial_seed`].
pub const SEED_RULE: &str = "splitmix64-golden-v1";
/// Generator family used for every trial stream.
pub const GENERATOR: &str = "chacha8";

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trial `index`: splitmix64(master + (index + 1)·golden), wrapping.
pub fn trial_seed(master: u64, index: u64) -> u64 {
    splitmix64(master.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN)))
}

/// Generator for trial `index`.
pub fn trial_rng(master: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(trial_seed(master, index))
}

/// Runs trials on a private pool of `workers` threads; results come back in trial order.
#[derive(Debug)]
pub struct TrialRunner {
    pool: rayon::ThreadPool,
    workers: usize,
}

impl TrialRunner {
    pub fn new(workers: usize) -> Result<Self> {
        if workers == 0 {
            return Err(Error::InvalidParameter("worker count must be positive".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
        Ok(TrialRunner { pool, workers })
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    /// Calls `trial(index, rng)` for every index in `0..trials` with the derived generator.
    pub fn run<T, F>(&self, master: u64, trials: usize, trial: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize, &mut ChaCha8Rng) -> Result<T> + Sync,
    {
        self.pool.install(|| {
            (0..trials)
                .into_par_iter()
                .map(|i| trial(i, &mut trial_rng(master, i as u64)))
                .collect()
        })
    }

    /// Runs arbitrary work inside the pool.
    pub fn install<T: Send>(&self, f: impl FnOnce() -> T + Send) -> T {
        self.pool.install(f)
    }
}
