#![allow(dead_code)]

use ndarray::Array2;
use ocsdf::data_io::{make_toy, standardize, Dataset, StandardizationStats};
use ocsdf::Scorer;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Cell centres of a `side × side` grid over `[−1, 1]²` that fall inside the unit disk.
pub fn disk_probes(side: usize) -> Array2<f64> {
    let mut pts = Vec::new();
    for i in 0..side {
        for j in 0..side {
            let x = -1.0 + 2.0 * (i as f64 + 0.5) / side as f64;
            let y = -1.0 + 2.0 * (j as f64 + 0.5) / side as f64;
            if x * x + y * y < 1.0 {
                pts.extend([x, y]);
            }
        }
    }
    Array2::from_shape_vec((pts.len() / 2, 2), pts).unwrap()
}

/// Mean of `|(f − m) − (1 − ‖x‖)|` over the probes.
pub fn disk_sdf_error<S: Scorer>(net: &S, margin: f64, probes: &Array2<f64>) -> f64 {
    let s = net.scores(probes.view()).unwrap();
    let total: f64 = probes
        .rows()
        .into_iter()
        .zip(s.iter())
        .map(|(r, f)| ((f - margin) - (1.0 - (r[0] * r[0] + r[1] * r[1]).sqrt())).abs())
        .sum();
    total / s.len() as f64
}

/// Standardized noisy two-moons sample.
pub fn moons(n: usize, seed: u64) -> (Dataset, StandardizationStats) {
    let raw = make_toy("two_moons", n, 0.05, &mut rng(seed)).unwrap();
    standardize(&raw).unwrap()
}
