//! Central finite differences for checking analytic gradients.

/// `∂f/∂x_i ≈ (f(x + h_i e_i) − f(x − h_i e_i)) / 2h_i` with `h_i = step·(1 + |x_i|)`.
pub fn central_difference<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = step * (1.0 + x[i].abs());
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a − b| / max(|a|, |b|, floor)`; the floor keeps near-zero entries from
/// dominating on cancellation noise.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Largest relative error over all coordinates.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n, floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn differentiates_a_cubic() {
        let g = central_difference(|x| x[0].powi(3) + 2.0 * x[0] * x[1], &[1.5, -2.0], 1e-5);
        assert!(relative_error(g[0], 3.0 * 2.25 - 4.0, 1e-8) < 1e-8);
        assert!(relative_error(g[1], 3.0, 1e-8) < 1e-8);
    }
}
