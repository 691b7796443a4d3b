//! Shared helpers for the engine tests.

/// 64-bit linear congruential generator (MMIX constants); test-local so the
/// suites stay deterministic without pulling in the main crate.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn new(seed: u64) -> Self {
        Lcg(seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(1))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        self.0
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform in [-1, 1).
    pub fn next_sym(&mut self) -> f64 {
        self.next_f64() * 2.0 - 1.0
    }

    pub fn vec_sym(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.next_sym()).collect()
    }
}

pub fn assert_close(actual: &[f64], expected: &[f64], tol: f64, what: &str) {
    assert_eq!(actual.len(), expected.len(), "{what}: length mismatch");
    for (i, (a, e)) in actual.iter().zip(expected).enumerate() {
        assert!(
            (a - e).abs() <= tol,
            "{what}[{i}]: got {a}, expected {e} (diff {})",
            (a - e).abs()
        );
    }
}
