//! Fixed-grid quadrature rules.

use crate::error::{Error, Result};

/// Composite Simpson weights for `n` intervals (n even) of width `h`.
pub fn simpson_weights(n: usize, h: f64) -> Result<Vec<f64>> {
    if n == 0 || n % 2 != 0 {
        return Err(Error::invalid(format!(
            "Simpson rule needs an even, positive interval count (got {n})"
        )));
    }
    let mut w = vec![0.0; n + 1];
    for (k, wk) in w.iter_mut().enumerate() {
        *wk = if k == 0 || k == n {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        } * h
            / 3.0;
    }
    Ok(w)
}

/// Midpoints of `n` equal cells on [a, b].
pub fn midpoints(a: f64, b: f64, n: usize) -> Vec<f64> {
    let h = (b - a) / n as f64;
    (0..n).map(|k| a + (k as f64 + 0.5) * h).collect()
}

/// Composite Simpson on [a, b] with `n` intervals.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> Result<f64> {
    let h = (b - a) / n as f64;
    let w = simpson_weights(n, h)?;
    Ok(w.iter()
        .enumerate()
        .map(|(k, wk)| wk * f(a + k as f64 * h))
        .sum())
}

/// Adaptive double-exponential quadrature returning (value, error estimate).
pub fn adaptive<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64) -> (f64, f64) {
    let out = quadrature::double_exponential::integrate(f, a, b, abs_tol);
    (out.integral, out.error_estimate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_is_exact_on_cubics() {
        let v = simpson(|x| x * x * x - 2.0 * x + 1.0, -1.0, 2.0, 6).unwrap();
        assert!((v - (15.0 / 4.0 - 3.0 + 3.0)).abs() < 1e-13);
        assert!(simpson_weights(3, 1.0).is_err());
    }

    #[test]
    fn adaptive_matches_closed_form() {
        let (v, _) = adaptive(|x: f64| x.exp(), 0.0, 1.0, 1e-14);
        assert!((v - (1f64.exp() - 1.0)).abs() < 1e-13);
    }
}
