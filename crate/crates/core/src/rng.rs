//! Seeded, splittable random streams.
//!
//! All randomness derives from one `u64` seed. A [`SeedStream`] hands out
//! independent ChaCha8 streams keyed by a 64-bit stream id, so batched and
//! sequential code paths draw identical numbers for the same logical clip.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Rng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedStream {
    seed: u64,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent generator for `stream`. Same `(seed, stream)` always
    /// yields the same sequence.
    pub fn rng(&self, stream: u64) -> Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    /// Derived seed stream, for handing a sub-component its own namespace.
    pub fn child(&self, tag: u64) -> SeedStream {
        let mut rng = self.rng(tag ^ 0x9E37_79B9_7F4A_7C15);
        SeedStream::new(rand::Rng::random(&mut rng))
    }
}

/// `rows × cols` matrix of standard normal draws.
pub fn standard_normal(rng: &mut Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}
