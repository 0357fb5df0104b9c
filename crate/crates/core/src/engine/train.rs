use rand::Rng;

use super::{controlled_gradient, Optimizer};
use crate::coefficients::{CoefficientProvider, ProviderKind};
use crate::data::sample_minibatch;
use crate::error::{Error, Result};
use crate::models::{per_datum_gradients, DoublyStochasticModel};
use crate::noise::{eval_basis, sample_noise_for, BasisOrder};
use crate::objectives::{evaluate_objective, ObjectiveKind};
use crate::rng::StreamRng;
use crate::scalar::{norm, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSettings {
    pub order: BasisOrder,
    pub samples: usize,
    pub objective: ObjectiveKind,
    pub batch_size: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self { order: BasisOrder::LINEAR, samples: 1, objective: ObjectiveKind::SquaredDifference, batch_size: 10 }
    }
}

/// What one alternating step observed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport<T> {
    /// Coefficient objective at the pre-update coefficients.
    pub objective_value: T,
    pub grad_norm: T,
    pub controlled_norm: T,
}

/// One provider step followed by one model step on the same noise draw.
///
/// 1. draw `ε_b` for the batch; 2. per-datum gradients at `θ`;
/// 3. evaluate the coefficient objective at the current coefficients and step
///    the provider; 4. recompute coefficients from the updated provider,
///    correct the already-sampled gradient with them and step `θ`.
#[allow(clippy::too_many_arguments)]
pub fn alternating_step<T: Scalar, M: DoublyStochasticModel<T> + ?Sized, R: Rng + ?Sized>(
    model: &M,
    theta: &mut [T],
    provider: &mut CoefficientProvider<T>,
    settings: &TrainSettings,
    model_opt: &mut Optimizer<T>,
    coeff_opt: &mut Optimizer<T>,
    batch: &[usize],
    rng: &mut R,
) -> Result<StepReport<T>> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let noise = sample_noise_for::<T, _>(rng, batch, settings.samples, model.noise_dim())?;
    let grads = per_datum_gradients(model, &noise, theta)?;
    let basis = eval_basis(&noise, settings.order.get())?.sample_mean();
    let contexts: Vec<&[T]> = batch.iter().map(|&b| model.context(b)).collect();

    let (coeffs, cache) = provider.coefficients(&contexts)?;
    let objective = evaluate_objective(settings.objective, &grads, &basis, &coeffs)?;
    if provider.kind() != ProviderKind::Uncontrolled {
        let phi_grad = provider.backward(&cache, &objective.d_coeff)?;
        coeff_opt.step(provider.params_mut(), &phi_grad)?;
    }

    let (coeffs, _) = provider.coefficients(&contexts)?;
    let scale = T::of(model.num_data() as f64 / batch.len() as f64);
    let cg = controlled_gradient(&grads, &basis, &coeffs, scale)?;
    model_opt.step(theta, &cg.g_tilde)?;
    Ok(StepReport {
        objective_value: objective.value,
        grad_norm: norm(&cg.g_hat),
        controlled_norm: norm(&cg.g_tilde),
    })
}

/// Owns the state of one joint training run.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub theta: Vec<T>,
    pub provider: CoefficientProvider<T>,
    pub settings: TrainSettings,
    pub model_opt: Optimizer<T>,
    pub coeff_opt: Optimizer<T>,
    pub rng: StreamRng,
}

impl<T: Scalar> Trainer<T> {
    /// Samples a mini-batch and takes one alternating step.
    pub fn step<M: DoublyStochasticModel<T> + ?Sized>(&mut self, model: &M) -> Result<StepReport<T>> {
        let batch = sample_minibatch(&mut self.rng, model.num_data(), self.settings.batch_size)?;
        alternating_step(
            model,
            &mut self.theta,
            &mut self.provider,
            &self.settings,
            &mut self.model_opt,
            &mut self.coeff_opt,
            &batch,
            &mut self.rng,
        )
    }

    /// Provider-only update at frozen `θ` (no model step).
    pub fn coefficient_step<M: DoublyStochasticModel<T> + ?Sized>(&mut self, model: &M, batch: &[usize]) -> Result<T> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let noise = sample_noise_for::<T, _>(&mut self.rng, batch, self.settings.samples, model.noise_dim())?;
        let grads = per_datum_gradients(model, &noise, &self.theta)?;
        let basis = eval_basis(&noise, self.settings.order.get())?.sample_mean();
        let contexts: Vec<&[T]> = batch.iter().map(|&b| model.context(b)).collect();
        let (coeffs, cache) = self.provider.coefficients(&contexts)?;
        let objective = evaluate_objective(self.settings.objective, &grads, &basis, &coeffs)?;
        if self.provider.kind() != ProviderKind::Uncontrolled {
            let phi_grad = self.provider.backward(&cache, &objective.d_coeff)?;
            self.coeff_opt.step(self.provider.params_mut(), &phi_grad)?;
        }
        Ok(objective.value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{xavier_init, ContextFreeCoefficient};
    use crate::engine::OptimizerConfig;
    use crate::models::QuadraticFamily;
    use crate::rng;

    fn family() -> QuadraticFamily<f64> {
        QuadraticFamily::synthetic(1, 20, 3, 2, 2).unwrap()
    }

    fn trainer(provider: CoefficientProvider<f64>, coeff_lr: f64, seed: u64) -> Trainer<f64> {
        let n = provider.num_params();
        Trainer {
            theta: vec![0.5, -0.5, 1.0],
            provider,
            settings: TrainSettings { batch_size: 5, ..TrainSettings::default() },
            model_opt: Optimizer::new(OptimizerConfig::adam(0.01), 3).unwrap(),
            coeff_opt: Optimizer::new(OptimizerConfig::adam(coeff_lr), n).unwrap(),
            rng: rng::stream(seed, &[]),
        }
    }

    #[test]
    fn frozen_zero_provider_matches_uncontrolled_bitwise() {
        let model = family();
        let mut a = trainer(CoefficientProvider::Uncontrolled { params: 3, features: 2 }, 0.0, 4);
        let mut b = trainer(CoefficientProvider::ContextFree(ContextFreeCoefficient::zeros(3, 2)), 0.0, 4);
        for _ in 0..30 {
            let ra = a.step(&model).unwrap();
            let rb = b.step(&model).unwrap();
            assert_eq!(ra.controlled_norm, rb.controlled_norm);
        }
        assert_eq!(a.theta, b.theta);
    }

    #[test]
    fn runs_are_reproducible() {
        let model = family();
        let net = xavier_init(&[2, 8, 6], 3, 2, 3).unwrap();
        let mut a = trainer(CoefficientProvider::Amortized(net.clone()), 0.01, 9);
        let mut b = trainer(CoefficientProvider::Amortized(net), 0.01, 9);
        for _ in 0..20 {
            assert_eq!(a.step(&model).unwrap(), b.step(&model).unwrap());
        }
        assert_eq!(a.theta, b.theta);
        assert_eq!(a.provider.params(), b.provider.params());
    }

    #[test]
    fn empty_batch_rejected() {
        let model = family();
        let mut t = trainer(CoefficientProvider::Uncontrolled { params: 3, features: 2 }, 0.0, 1);
        let err = alternating_step(
            &model,
            &mut t.theta,
            &mut t.provider,
            &t.settings,
            &mut t.model_opt,
            &mut t.coeff_opt,
            &[],
            &mut t.rng,
        );
        assert!(matches!(err, Err(Error::EmptyBatch)));
    }

    #[test]
    fn corrected_gradient_matches_direct_assembly() {
        // Replay the step by hand with the post-update coefficients.
        let model = family();
        let mut t = trainer(CoefficientProvider::ContextFree(ContextFreeCoefficient::zeros(3, 2)), 0.05, 2);
        for _ in 0..5 {
            t.step(&model).unwrap();
        }
        let batch = [1usize, 4, 7];
        let theta0 = t.theta.clone();
        let mut replay_rng = t.rng.clone();
        let mut shadow = t.clone();
        let report = alternating_step(
            &model,
            &mut t.theta,
            &mut t.provider,
            &t.settings,
            &mut t.model_opt,
            &mut t.coeff_opt,
            &batch,
            &mut t.rng,
        )
        .unwrap();
        let noise = sample_noise_for::<f64, _>(&mut replay_rng, &batch, 1, 2).unwrap();
        let grads = per_datum_gradients(&model, &noise, &theta0).unwrap();
        let basis = eval_basis(&noise, 1).unwrap();
        let ctx: Vec<&[f64]> = batch.iter().map(|&b| model.context(b)).collect();
        let (c_pre, cache) = shadow.provider.coefficients(&ctx).unwrap();
        let obj = evaluate_objective(shadow.settings.objective, &grads, &basis, &c_pre).unwrap();
        let pg = shadow.provider.backward(&cache, &obj.d_coeff).unwrap();
        shadow.coeff_opt.step(shadow.provider.params_mut(), &pg).unwrap();
        let (c_post, _) = shadow.provider.coefficients(&ctx).unwrap();
        let cg = controlled_gradient(&grads, &basis, &c_post, 20.0 / 3.0).unwrap();
        assert_eq!(norm(&cg.g_tilde), report.controlled_norm);
        assert_eq!(obj.value, report.objective_value);
    }
}
