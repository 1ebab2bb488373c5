//! Counter-based seeding: every (grid point, trial, controller) draws from its own
//! ChaCha stream under a shared master seed, so trials can run in any order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedKey {
    pub master: u64,
    pub stream: u64,
}

impl SeedKey {
    pub fn new(master: u64, stream: u64) -> Self {
        Self { master, stream }
    }

    /// Stream layout: `point` in bits 48..64, `trial` in bits 16..48, `controller` in bits 0..16.
    pub fn for_trial(master: u64, point: usize, trial: usize, controller: usize) -> Self {
        assert!(point < 1 << 16, "grid point index {point} out of range");
        assert!(trial < 1 << 32, "trial index {trial} out of range");
        assert!(controller < 1 << 16, "controller index {controller} out of range");
        Self::new(
            master,
            ((point as u64) << 48) | ((trial as u64) << 16) | controller as u64,
        )
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(self.stream);
        rng
    }
}
