//! Doubly stochastic objectives with per-datum values and pathwise gradients.

mod logistic;
mod quadratic;

pub use logistic::{gaussian_kl, logreg_per_datum_grad, tri_index, tri_len, LogisticRegression};
pub use quadratic::{quad_per_datum_grad, QuadraticFamily, QuadraticSpec};

use rand::Rng;

use crate::error::{Error, Result};
use crate::noise::NoiseDraw;
use crate::rng;
use crate::scalar::Scalar;
use rand_distr::StandardNormal;

/// `L(θ) = Σ_n E_ε[f_n(ε, θ)]`, exposed one datum at a time.
///
/// Implementations assume slices of the advertised lengths; the checked
/// free functions in this module validate shapes before delegating.
pub trait DoublyStochasticModel<T: Scalar>: Sync {
    fn num_data(&self) -> usize;
    fn param_dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn context_dim(&self) -> usize;
    /// Context point `y_b` fed to the recognition network.
    fn context(&self, b: usize) -> &[T];
    fn value(&self, b: usize, eps: &[T], theta: &[T]) -> T;
    /// Writes `∂f_b/∂θ` at fixed `ε` into `out`.
    fn gradient(&self, b: usize, eps: &[T], theta: &[T], out: &mut [T]);
}

/// Flat parameter vector partitioned into named segments.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<T> {
    pub theta: Vec<T>,
    segments: Vec<(&'static str, usize)>,
}

impl<T: Scalar> ModelState<T> {
    pub fn new(theta: Vec<T>, segments: Vec<(&'static str, usize)>) -> Result<Self> {
        let total: usize = segments.iter().map(|s| s.1).sum();
        if total != theta.len() {
            return Err(Error::Shape(format!("segments cover {total} of {} parameters", theta.len())));
        }
        Ok(Self { theta, segments })
    }

    pub fn segment(&self, name: &str) -> Option<&[T]> {
        let mut start = 0;
        for &(n, len) in &self.segments {
            if n == name {
                return Some(&self.theta[start..start + len]);
            }
            start += len;
        }
        None
    }

    pub fn segments(&self) -> &[(&'static str, usize)] {
        &self.segments
    }
}

/// Per-datum gradients averaged over the sample axis: `[batch][P]`.
pub fn per_datum_gradients<T: Scalar, M: DoublyStochasticModel<T> + ?Sized>(
    model: &M,
    noise: &NoiseDraw<T>,
    theta: &[T],
) -> Result<Vec<T>> {
    let p = model.param_dim();
    if theta.len() != p || noise.dim() != model.noise_dim() || noise.batch_indices.len() != noise.batch() {
        return Err(Error::Shape(format!(
            "theta {} vs P {p}, noise dim {} vs D {}",
            theta.len(),
            noise.dim(),
            model.noise_dim()
        )));
    }
    let mut out = vec![T::zero(); noise.batch() * p];
    let mut scratch = vec![T::zero(); p];
    let inv_s = T::one() / T::of(noise.samples() as f64);
    for (b, &idx) in noise.batch_indices.iter().enumerate() {
        if idx >= model.num_data() {
            return Err(Error::InvalidArgument(format!("datum index {idx} out of range")));
        }
        let row = &mut out[b * p..(b + 1) * p];
        for s in 0..noise.samples() {
            model.gradient(idx, noise.eps(b, s), theta, &mut scratch);
            row.iter_mut().zip(&scratch).for_each(|(r, &g)| *r += g);
        }
        if noise.samples() > 1 {
            row.iter_mut().for_each(|r| *r *= inv_s);
        }
    }
    Ok(out)
}

/// `(N / (|B| S)) Σ_b Σ_s f_b(ε_b^(s), θ)`, unbiased for the full objective.
pub fn minibatch_objective<T: Scalar, M: DoublyStochasticModel<T> + ?Sized>(
    model: &M,
    noise: &NoiseDraw<T>,
    theta: &[T],
) -> T {
    let mut acc = T::zero();
    for (b, &idx) in noise.batch_indices.iter().enumerate() {
        for s in 0..noise.samples() {
            acc += model.value(idx, noise.eps(b, s), theta);
        }
    }
    acc * T::of(model.num_data() as f64 / (noise.batch() * noise.samples()) as f64)
}

/// Full-data Monte Carlo objective: `Σ_n (1/S) Σ_s f_n(ε_n^(s), θ)`.
///
/// For the logistic model this is the NELBO, because each `f_n` carries a
/// `1/N` share of the KL term. Datum `n` uses substream `(seed, n)`.
pub fn nelbo_estimate<T: Scalar, M: DoublyStochasticModel<T> + ?Sized>(
    model: &M,
    theta: &[T],
    samples: usize,
    seed: u64,
) -> Result<T> {
    if samples == 0 {
        return Err(Error::InvalidArgument("nelbo needs at least one noise sample".into()));
    }
    let d = model.noise_dim();
    let mut eps = vec![T::zero(); d];
    let mut total = T::zero();
    for n in 0..model.num_data() {
        let mut r = rng::stream(seed, &[n as u64]);
        let mut acc = T::zero();
        for _ in 0..samples {
            eps.iter_mut().for_each(|e| *e = T::of(r.sample::<f64, _>(StandardNormal)));
            acc += model.value(n, &eps, theta);
        }
        total += acc / T::of(samples as f64);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_state_segments() {
        let s = ModelState::new(vec![1.0, 2.0, 3.0], vec![("mean", 1), ("chol", 2)]).unwrap();
        assert_eq!(s.segment("chol").unwrap(), &[2.0, 3.0]);
        assert!(s.segment("missing").is_none());
        assert!(ModelState::new(vec![1.0_f64], vec![("a", 2)]).is_err());
    }
}
