//! Counter-based derivation of per-task random streams.
//!
//! Every parallel unit of work (a resampling draw, a tuning evaluation, a
//! Monte Carlo replication) gets its own ChaCha stream keyed by the master
//! seed, a stream label, and up to two counters. Results are therefore
//! independent of scheduling and worker count.

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Calibration resampling draws.
pub const STREAM_CALIBRATE: u64 = 1;
/// Double-bootstrap tuning draws.
pub const STREAM_TUNING: u64 = 2;
/// Uniform-loss reference quantile draws.
pub const STREAM_TUNING_GAMMA: u64 = 3;
/// Dataset generation.
pub const STREAM_DGP: u64 = 4;
/// Monte Carlo replications.
pub const STREAM_REPLICATION: u64 = 5;

/// Derive an independent stream from `(master, label, a, b)`.
pub fn derive_rng(master: u64, label: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[0..8].copy_from_slice(&master.to_le_bytes());
    seed[8..16].copy_from_slice(&label.to_le_bytes());
    seed[16..24].copy_from_slice(&a.to_le_bytes());
    seed[24..32].copy_from_slice(&b.to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}

/// Fill a length-`d` vector with independent standard normals.
pub fn standard_normal_vector<R: Rng>(rng: &mut R, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.sample(StandardNormal))
}
