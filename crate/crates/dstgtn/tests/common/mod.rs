//! Shared fixtures for the integration suites.

use dstgtn::config::ModelConfig;
use dstgtn::data::{generate_synthetic, Dataset, SyntheticConfig};

/// Micro architecture used for gradient checks and structural probes:
/// N=3, T=4, d=d1=2, d2=4, h=2, one layer per stack, D=10.
pub fn micro_config() -> ModelConfig {
    ModelConfig {
        nodes: 3,
        t_in: 4,
        t_out: 4,
        d: 2,
        d1: 2,
        d2: 4,
        heads: 2,
        temporal_layers: 1,
        dstm_layers: 1,
        // 2-hour sampling keeps the day table small for finite differencing.
        samples_per_day: 12,
        ..ModelConfig::default()
    }
}

pub fn micro_dataset(t_total: usize, seed: u64) -> Dataset {
    let cfg = SyntheticConfig {
        nodes: 3,
        t_total,
        seed,
        interval_seconds: 7200,
        ..SyntheticConfig::default()
    };
    generate_synthetic(&cfg).unwrap().dataset
}

/// Flat timestamps for a batch of consecutive windows starting at the given
/// offsets.
pub fn batch_timestamps(ds: &Dataset, offsets: &[usize], t_in: usize) -> Vec<i64> {
    let mut out = Vec::with_capacity(offsets.len() * t_in);
    for &o in offsets {
        for k in 0..t_in {
            out.push(ds.timestamp(o + k));
        }
    }
    out
}

pub fn assert_close(actual: f64, expected: f64, tol: f64, what: &str) {
    assert!(
        (actual - expected).abs() <= tol,
        "{what}: got {actual}, expected {expected}"
    );
}
