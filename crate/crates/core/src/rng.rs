//! Seed derivation and random draws.
//!
//! Every random stream in a run is a pure function of
//! `(master_seed, geometry, trial, stream)`. There is no global RNG state,
//! so any trial can be regenerated in isolation and the scheduler is free to
//! execute trials in any order.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Labels for the independent random streams drawn per geometry or trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Placement,
    Shadowing,
    Channel,
    PhaseNoise,
    Data,
    Noise,
    Ici,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Placement => 0x01,
            Stream::Shadowing => 0x02,
            Stream::Channel => 0x03,
            Stream::PhaseNoise => 0x04,
            Stream::Data => 0x05,
            Stream::Noise => 0x06,
            Stream::Ici => 0x07,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes the stream coordinates into a 64-bit seed.
pub fn derive_seed(master: u64, geometry: u64, trial: u64, stream: Stream) -> u64 {
    let mut h = splitmix64(master);
    h = splitmix64(h ^ geometry);
    h = splitmix64(h ^ trial.rotate_left(17));
    splitmix64(h ^ stream.tag().rotate_left(41))
}

pub fn stream_rng(master: u64, geometry: u64, trial: u64, stream: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, geometry, trial, stream))
}

/// Circularly-symmetric complex Gaussian sample with the given variance.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let scale = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * scale, im * scale)
}

pub fn normal<R: Rng + ?Sized>(rng: &mut R, std_dev: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    z * std_dev
}
