//! Seeded, splittable random streams.
//!
//! Every random draw is tied to `(global seed, purpose, index)`, so results do not
//! depend on how samples are batched or scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::Vector;

/// What a stream is used for. Distinct purposes never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    InitialNoise,
    ModelPreset,
    Minibatch,
    Probe,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::InitialNoise => 0x4e4f_4953,
            Purpose::ModelPreset => 0x4d4f_444c,
            Purpose::Minibatch => 0x4241_5443,
            Purpose::Probe => 0x5052_4f42,
        }
    }
}

pub type StreamRng = ChaCha12Rng;

/// Independent generator for `(seed, purpose, index)`.
pub fn stream(seed: u64, purpose: Purpose, index: u64) -> StreamRng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ purpose.tag().rotate_left(32));
    rng.set_stream(index);
    rng
}

pub fn standard_normal_vector(rng: &mut StreamRng, dim: usize) -> Vector {
    Vector::from_iterator(dim, (0..dim).map(|_| StandardNormal.sample(rng)))
}

/// `x_T = t_max · z` with `z ~ N(0, I)`, one stream per sample index.
pub fn initial_noise(seed: u64, index: u64, dim: usize, t_max: f64) -> Vector {
    let mut rng = stream(seed, Purpose::InitialNoise, index);
    standard_normal_vector(&mut rng, dim) * t_max
}

pub fn initial_noises(seed: u64, first_index: u64, count: usize, dim: usize, t_max: f64) -> Vec<Vector> {
    (0..count as u64)
        .map(|k| initial_noise(seed, first_index + k, dim, t_max))
        .collect()
}
