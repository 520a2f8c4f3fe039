//! Shared test oracles: finite differences, a tiny deterministic RNG, and
//! naive reference implementations kept independent of the library's
//! computation paths.

#![allow(dead_code)]

/// Deterministic xorshift generator for test inputs; unrelated to the
/// library's own RNG so fixtures cannot accidentally mirror implementation
/// behavior.
pub struct TestRng(u64);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        TestRng(seed.max(1))
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.0 = x;
        x
    }

    /// Uniform in [0, 1).
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform in [lo, hi).
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    pub fn coin(&mut self, p: f64) -> bool {
        self.unit() < p
    }
}

/// Central finite difference d f / d x_i with step `h`.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut plus = x.to_vec();
    plus[i] += h;
    let mut minus = x.to_vec();
    minus[i] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

/// Relative error with a unit floor, so tiny gradients are compared absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / f64::max(1.0, f64::max(a.abs(), b.abs()))
}

/// Assert every coordinate's analytic gradient matches central differences.
pub fn assert_grad_matches(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    h: f64,
    tol: f64,
    label: &str,
) {
    assert_eq!(analytic.len(), x.len(), "{label}: gradient length");
    for i in 0..x.len() {
        let numeric = central_diff(f, x, i, h);
        let err = rel_err(analytic[i], numeric);
        assert!(
            err < tol,
            "{label}: coord {i}: analytic {} vs numeric {} (rel err {err:.3e})",
            analytic[i],
            numeric
        );
    }
}
