//! Training objectives for coefficient providers.
//!
//! Each objective is a single-draw estimate of `Σ_i Var[G̃_i]` up to terms that
//! do not depend on the coefficients, so values are only comparable for the
//! same `(θ, batch, noise)`. Sums run over the batch; nothing is averaged.

use crate::coefficients::CoefficientBlock;
use crate::error::{Error, Result};
use crate::noise::BasisEval;
use crate::scalar::{dot, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ObjectiveKind {
    PartialGradients,
    GradientSum,
    SquaredDifference,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 3] =
        [ObjectiveKind::PartialGradients, ObjectiveKind::GradientSum, ObjectiveKind::SquaredDifference];

    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::PartialGradients => "partial-gradients",
            ObjectiveKind::GradientSum => "gradient-sum",
            ObjectiveKind::SquaredDifference => "squared-difference",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s || k.name().replace('-', "_") == s)
            .ok_or_else(|| Error::Config(format!("unknown objective '{s}'")))
    }
}

#[derive(Debug, Clone)]
pub struct ObjectiveEvaluation<T> {
    pub value: T,
    /// `∂value/∂c`, shaped like the coefficient block.
    pub d_coeff: CoefficientBlock<T>,
    pub kind: ObjectiveKind,
}

fn check_shapes<T: Scalar>(grads_len: usize, per_datum: bool, basis: &BasisEval<T>, coeffs: &CoefficientBlock<T>) -> Result<()> {
    let (b, p, f) = (coeffs.batch(), coeffs.params(), coeffs.features());
    if basis.samples() != 1 {
        return Err(Error::Shape(format!(
            "objectives take one sample per datum (got {}); average over samples first",
            basis.samples()
        )));
    }
    if basis.batch() != b || basis.features() != f {
        return Err(Error::Shape(format!(
            "basis is {}x{}, coefficients are {b}x{p}x{f}",
            basis.batch(),
            basis.features()
        )));
    }
    let want = if per_datum { b * p } else { p };
    if grads_len != want {
        return Err(Error::Shape(format!("gradient array has {grads_len} entries, expected {want}")));
    }
    Ok(())
}

/// `Σ_i Σ_b [(c_biᵀw_b)² − 2 target(b, i)·c_biᵀw_b]` and its coefficient gradient.
fn cross_term_form<T: Scalar>(
    basis: &BasisEval<T>,
    coeffs: &CoefficientBlock<T>,
    target: impl Fn(usize, usize) -> T,
    kind: ObjectiveKind,
) -> ObjectiveEvaluation<T> {
    let two = T::of(2.0);
    let mut d = CoefficientBlock::zeros(coeffs.batch(), coeffs.params(), coeffs.features());
    let mut value = T::zero();
    for b in 0..coeffs.batch() {
        let w = basis.w(b, 0);
        for i in 0..coeffs.params() {
            let cw = dot(coeffs.row(b, i), w);
            let g = target(b, i);
            value += cw * cw - two * g * cw;
            let scale = two * (cw - g);
            d.row_mut(b, i).iter_mut().zip(w).for_each(|(o, &wv)| *o = scale * wv);
        }
    }
    ObjectiveEvaluation { value, d_coeff: d, kind }
}

/// Uses each datum's own gradient `ĝ_bi`; `per_datum_grads` is `[batch][P]`.
pub fn partial_gradients_objective<T: Scalar>(
    per_datum_grads: &[T],
    basis: &BasisEval<T>,
    coeffs: &CoefficientBlock<T>,
) -> Result<ObjectiveEvaluation<T>> {
    check_shapes(per_datum_grads.len(), true, basis, coeffs)?;
    let p = coeffs.params();
    Ok(cross_term_form(basis, coeffs, |b, i| per_datum_grads[b * p + i], ObjectiveKind::PartialGradients))
}

/// Replaces `ĝ_bi` by the batch sum `Ĝ_i`; `g_hat` is `[P]`.
pub fn gradient_sum_objective<T: Scalar>(
    g_hat: &[T],
    basis: &BasisEval<T>,
    coeffs: &CoefficientBlock<T>,
) -> Result<ObjectiveEvaluation<T>> {
    check_shapes(g_hat.len(), false, basis, coeffs)?;
    Ok(cross_term_form(basis, coeffs, |_, i| g_hat[i], ObjectiveKind::GradientSum))
}

/// `Σ_i (Ĝ_i − Σ_b c_biᵀw_b)²`: a regression of the batch gradient on the basis.
pub fn squared_difference_objective<T: Scalar>(
    g_hat: &[T],
    basis: &BasisEval<T>,
    coeffs: &CoefficientBlock<T>,
) -> Result<ObjectiveEvaluation<T>> {
    check_shapes(g_hat.len(), false, basis, coeffs)?;
    let (batch, p) = (coeffs.batch(), coeffs.params());
    let two = T::of(2.0);
    let mut d = CoefficientBlock::zeros(batch, p, coeffs.features());
    let mut value = T::zero();
    for i in 0..p {
        let control: T = (0..batch).map(|b| dot(coeffs.row(b, i), basis.w(b, 0))).sum();
        let resid = g_hat[i] - control;
        value += resid * resid;
        for b in 0..batch {
            d.row_mut(b, i).iter_mut().zip(basis.w(b, 0)).for_each(|(o, &wv)| *o = -two * resid * wv);
        }
    }
    Ok(ObjectiveEvaluation { value, d_coeff: d, kind: ObjectiveKind::SquaredDifference })
}

/// `Ĝ = Σ_b ĝ_b` from a `[batch][P]` array.
pub fn batch_sum<T: Scalar>(per_datum_grads: &[T], params: usize) -> Vec<T> {
    let mut g = vec![T::zero(); params];
    per_datum_grads.chunks(params).for_each(|row| g.iter_mut().zip(row).for_each(|(a, &v)| *a += v));
    g
}

/// Dispatches on `kind`, forming `Ĝ` from the per-datum gradients when needed.
pub fn evaluate_objective<T: Scalar>(
    kind: ObjectiveKind,
    per_datum_grads: &[T],
    basis: &BasisEval<T>,
    coeffs: &CoefficientBlock<T>,
) -> Result<ObjectiveEvaluation<T>> {
    match kind {
        ObjectiveKind::PartialGradients => partial_gradients_objective(per_datum_grads, basis, coeffs),
        ObjectiveKind::GradientSum | ObjectiveKind::SquaredDifference => {
            check_shapes(per_datum_grads.len(), true, basis, coeffs)?;
            let g_hat = batch_sum(per_datum_grads, coeffs.params());
            if kind == ObjectiveKind::GradientSum {
                gradient_sum_objective(&g_hat, basis, coeffs)
            } else {
                squared_difference_objective(&g_hat, basis, coeffs)
            }
        }
    }
}
