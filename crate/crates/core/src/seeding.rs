//! Seed management. Every random draw in the pipeline comes from a
//! [`SeedBank`] stream derived from one integer seed, so a run is fully
//! determined by its seed, inputs and config.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

static GLOBAL_SEED: AtomicU64 = AtomicU64::new(0);

/// Sets the process default seed returned by [`global_seed`].
pub fn set_global_seed(seed: u64) {
    GLOBAL_SEED.store(seed, Ordering::SeqCst);
}

pub fn global_seed() -> u64 {
    GLOBAL_SEED.load(Ordering::SeqCst)
}

/// Independent random streams of one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Split = 3,
    Dropout = 4,
    Embedding = 5,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedBank {
    seed: u64,
}

impl SeedBank {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn global() -> Self {
        Self::new(global_seed())
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rng(&self, stream: Stream) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream as u64);
        rng
    }
}
