//! Central finite differences for verifying hand-written backward passes.
//!
//! Kept free of any layer code so it stays an independent oracle.

/// Default perturbation used by the gradient checks.
pub const STEP: f64 = 1e-4;

/// Central-difference gradient of `f` at `x`.
pub fn numeric_grad(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let plus = f(&probe);
            probe[i] = orig - step;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

/// Fourth-order central difference:
/// `(8(f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h`.
pub fn numeric_grad4(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut at = |probe: &mut Vec<f64>, i: usize, v: f64| {
        probe[i] = v;
        f(probe)
    };
    (0..x.len())
        .map(|i| {
            let o = x[i];
            let near = at(&mut probe, i, o + step) - at(&mut probe, i, o - step);
            let far = at(&mut probe, i, o + 2.0 * step) - at(&mut probe, i, o - 2.0 * step);
            probe[i] = o;
            (8.0 * near - far) / (12.0 * step)
        })
        .collect()
}

/// `max_i |a_i - n_i| / max(|a_i|, |n_i|, 1e-8)`.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

/// Deterministic pseudo-random values in `[-1, 1)` for test fixtures.
pub fn fixture(seed: u64, len: usize) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}
