//! Deterministic random streams.
//!
//! Every source of randomness in the pipeline is a named stream derived
//! from one root seed, so components can be reseeded independently and a
//! fixed root seed reproduces a run byte for byte.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Splitmix64 finalizer; mixes seed material into well-spread stream seeds.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

fn fnv1a(name: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Named stream from a root seed. The same (seed, name) pair always yields
/// the same generator.
pub fn stream(root_seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(root_seed ^ fnv1a(name)))
}

/// Sub-stream indexed by an integer, e.g. one per trajectory.
pub fn substream(root_seed: u64, name: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(
        splitmix64(root_seed ^ fnv1a(name)).wrapping_add(index),
    ))
}

/// Standard normal draw via Box-Muller; two uniforms per call keeps the
/// stream layout independent of any library sampling internals.
pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    loop {
        let u1: f64 = rng.gen();
        let u2: f64 = rng.gen();
        if u1 > 0.0 {
            return (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        }
    }
}
