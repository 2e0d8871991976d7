//! Reproducible random streams.
//!
//! Each replicate owns a ChaCha8 stream selected by `(seed, stream_id)`, so a
//! parallel run draws exactly the same numbers as a serial one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(self.stream_id);
        r
    }
}

/// Uniform on `(0, 1]`; safe to take logarithms of.
pub fn open01<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

/// Run `f` on replicates `0..n`, replicate `i` on stream `(seed, offset + i)`.
/// Output order is replicate order whatever the thread count.
pub fn replicate<T, F>(seed: u64, offset: u64, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng, usize) -> T + Sync,
{
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(seed, offset + i as u64).rng();
            f(&mut rng, i)
        })
        .collect()
}
