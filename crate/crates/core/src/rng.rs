//! Seeded randomness: one RNG family, explicit seed derivation, and the
//! normal sampler used everywhere.
//!
//! All stochastic code takes a `u64` seed and builds a ChaCha8 stream from
//! it, so a (seed, config) pair pins every draw in the pipeline. Component
//! seeds are derived from a master seed with a SplitMix64 mix over the
//! component tag and cell index, which keeps runs independent without any
//! bookkeeping of stream offsets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;

/// The crate's RNG. ChaCha8 is deterministic across platforms and fast
/// enough that sampling never shows up in profiles.
pub type Chacha = ChaCha8Rng;

/// Fresh RNG for a seed.
pub fn chacha(seed: u64) -> Chacha {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(z: u64) -> u64 {
    let mut x = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Stable sub-seed for a named component and cell index:
/// `mix(mix(master) over tag bytes, index)`. Same inputs give the same
/// seed in every build; distinct tags or indices give unrelated streams.
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    let mut h = splitmix64(master);
    for &b in tag.as_bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    splitmix64(h ^ index)
}

/// One standard normal draw via Box-Muller (cosine branch only; the paired
/// sine value is discarded for simplicity, draws stay i.i.d.).
pub fn standard_normal<F: Scalar, R: Rng + ?Sized>(rng: &mut R) -> F {
    // u1 in (0,1] so the log is finite; u2 in [0,1).
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
    F::from_f64(z)
}

/// Vector of i.i.d. standard normals.
pub fn normal_vec<F: Scalar, R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<F> {
    (0..dim).map(|_| standard_normal(rng)).collect()
}

/// Uniform draw from `[lo, hi)` performed in `f64` then narrowed.
pub fn uniform<F: Scalar, R: Rng + ?Sized>(rng: &mut R, lo: F, hi: F) -> F {
    let u: f64 = rng.gen::<f64>();
    let lo64 = lo.to_f64().expect("finite bound");
    let hi64 = hi.to_f64().expect("finite bound");
    F::from_f64(lo64 + u * (hi64 - lo64))
}

/// Uniformly distributed direction on the unit sphere in `dim` dimensions
/// (normalized Gaussian; resamples the null vector, which has probability 0).
pub fn unit_direction<F: Scalar, R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<F> {
    loop {
        let mut v: Vec<F> = normal_vec(rng, dim);
        let n = crate::linalg::norm(&v);
        if n > F::zero() {
            for x in &mut v {
                *x /= n;
            }
            return v;
        }
    }
}
