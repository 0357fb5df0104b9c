use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Variance-minimizing coefficients estimated from `R` paired replicates:
/// `c*_i = (Cov[w] + ridge·I)⁻¹ Cov[w, g_i]` for every parameter `i`.
///
/// `grads` is `[R][P]` and `basis` is `[R][F]`, both flattened row-major.
/// Returns `[P][F]`. Test oracle only; training never calls this.
pub fn empirical_optimal_coefficient<T: Scalar>(
    grads: &[T],
    params: usize,
    basis: &[T],
    features: usize,
    ridge: T,
) -> Result<Vec<T>> {
    if params == 0 || features == 0 || !grads.len().is_multiple_of(params) || !basis.len().is_multiple_of(features) {
        return Err(Error::Shape("replicate arrays must be whole rows".into()));
    }
    let r = grads.len() / params;
    if basis.len() / features != r {
        return Err(Error::Shape(format!("{r} gradient replicates vs {} basis replicates", basis.len() / features)));
    }
    if r < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: r });
    }
    let mean = |data: &[T], width: usize| -> Vec<f64> {
        let mut m = vec![0.0; width];
        data.chunks(width).for_each(|row| m.iter_mut().zip(row).for_each(|(a, v)| *a += v.as_f64()));
        m.iter_mut().for_each(|a| *a /= r as f64);
        m
    };
    let (gm, wm) = (mean(grads, params), mean(basis, features));
    let mut cov_w = DMatrix::<f64>::zeros(features, features);
    let mut cov_wg = DMatrix::<f64>::zeros(features, params);
    let mut wc = vec![0.0; features];
    for (g, w) in grads.chunks(params).zip(basis.chunks(features)) {
        wc.iter_mut().zip(w).zip(&wm).for_each(|((c, v), m)| *c = v.as_f64() - m);
        for a in 0..features {
            for b in 0..=a {
                cov_w[(a, b)] += wc[a] * wc[b];
            }
            for (i, (gi, gmi)) in g.iter().zip(&gm).enumerate() {
                cov_wg[(a, i)] += wc[a] * (gi.as_f64() - gmi);
            }
        }
    }
    let denom = (r - 1) as f64;
    for a in 0..features {
        for b in 0..=a {
            cov_w[(a, b)] /= denom;
            cov_w[(b, a)] = cov_w[(a, b)];
        }
        cov_w[(a, a)] += ridge.as_f64();
    }
    cov_wg /= denom;
    let chol = cov_w
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("basis covariance is singular; increase the ridge".into()))?;
    let mut out = Vec::with_capacity(params * features);
    for i in 0..params {
        let rhs: DVector<f64> = cov_wg.column(i).into_owned();
        out.extend(chol.solve(&rhs).iter().map(|&v| T::of(v)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{eval_basis, sample_noise, NoiseDraw};

    #[test]
    fn needs_two_replicates() {
        let e = empirical_optimal_coefficient(&[1.0_f64], 1, &[0.5], 1, 1e-8);
        assert!(matches!(e, Err(Error::InsufficientSamples { needed: 2, got: 1 })));
    }

    #[test]
    fn constant_gradient_gives_zero_coefficient() {
        let n: NoiseDraw<f64> = sample_noise(1, 10_000, 1, 2).unwrap();
        let w = eval_basis(&n, 1).unwrap();
        let g = vec![3.0; 10_000];
        let c = empirical_optimal_coefficient(&g, 1, w.values(), 2, 1e-8).unwrap();
        assert!(c.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn stein_coefficient_for_quadratic_scalar() {
        // g = 2ε + ε², w = ε: Cov[ε, g] = E[g'] = 2, Var[ε] = 1.
        let n: NoiseDraw<f64> = sample_noise(5, 1_000_000, 1, 1).unwrap();
        let g: Vec<f64> = n.values().iter().map(|&e| 2.0 * e + e * e).collect();
        let c = empirical_optimal_coefficient(&g, 1, n.values(), 1, 1e-8).unwrap();
        // SE of the slope ≈ sqrt(Var[ε²]/R) = sqrt(2e-6).
        assert!((c[0] - 2.0).abs() < 4.0 * (2e-6f64).sqrt(), "c = {}", c[0]);
    }
}
