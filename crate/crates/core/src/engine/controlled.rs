use crate::coefficients::CoefficientBlock;
use crate::error::{Error, Result};
use crate::noise::BasisEval;
use crate::scalar::{dot, Scalar};

/// `g̃ = ĝ − cv`, all scaled by the same mini-batch factor.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlledGradient<T> {
    pub g_tilde: Vec<T>,
    pub g_hat: Vec<T>,
    pub cv_term: Vec<T>,
}

/// `G̃_i = scale · Σ_b (ĝ_bi − c_biᵀ w_b)`.
///
/// `per_datum_grads` is `[batch][P]`, already averaged over samples; a basis
/// with several samples is averaged the same way, which is exact because the
/// coefficients are shared across samples. With `S` samples the usual
/// `N/(|B|S)` scaling of sample sums is `N/|B|` on these averages.
pub fn controlled_gradient<T: Scalar>(
    per_datum_grads: &[T],
    basis: &BasisEval<T>,
    coeffs: &CoefficientBlock<T>,
    scale: T,
) -> Result<ControlledGradient<T>> {
    let basis = if basis.samples() > 1 { basis.sample_mean() } else { basis.clone() };
    let (batch, p) = (coeffs.batch(), coeffs.params());
    if basis.batch() != batch || basis.features() != coeffs.features() || per_datum_grads.len() != batch * p {
        return Err(Error::Shape(format!(
            "gradients {} entries, basis {}x{}, coefficients {batch}x{p}x{}",
            per_datum_grads.len(),
            basis.batch(),
            basis.features(),
            coeffs.features()
        )));
    }
    let mut g_hat = vec![T::zero(); p];
    let mut cv_term = vec![T::zero(); p];
    for b in 0..batch {
        let w = basis.w(b, 0);
        for i in 0..p {
            g_hat[i] += per_datum_grads[b * p + i];
            cv_term[i] += dot(coeffs.row(b, i), w);
        }
    }
    g_hat.iter_mut().for_each(|g| *g *= scale);
    cv_term.iter_mut().for_each(|c| *c *= scale);
    let g_tilde = g_hat.iter().zip(&cv_term).map(|(&g, &c)| g - c).collect();
    Ok(ControlledGradient { g_tilde, g_hat, cv_term })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{eval_basis, sample_noise, BasisOrder, NoiseDraw};

    #[test]
    fn zero_coefficients_leave_gradient_untouched() {
        let n: NoiseDraw<f64> = sample_noise(3, 4, 1, 2).unwrap();
        let w = eval_basis(&n, 2).unwrap();
        let g: Vec<f64> = (0..12).map(|k| (k as f64).sin()).collect();
        let c = CoefficientBlock::zeros(4, 3, 4);
        let cg = controlled_gradient(&g, &w, &c, 12.5).unwrap();
        assert_eq!(cg.g_tilde, cg.g_hat);
        assert!(cg.cv_term.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_example() {
        let w = BasisEval::from_values(vec![2.0_f64], BasisOrder::LINEAR, 1, 1, 1).unwrap();
        let c = CoefficientBlock::from_values(vec![2.0], 1, 1, 1).unwrap();
        let cg = controlled_gradient(&[5.0], &w, &c, 1.0).unwrap();
        assert_eq!(cg.g_tilde, vec![1.0]);
    }

    #[test]
    fn shape_mismatch() {
        let w = BasisEval::from_values(vec![2.0_f64], BasisOrder::LINEAR, 1, 1, 1).unwrap();
        let c = CoefficientBlock::zeros(1, 2, 1);
        assert!(matches!(controlled_gradient(&[5.0], &w, &c, 1.0), Err(Error::Shape(_))));
    }
}
