//! Measurement protocols: variance ratios, NELBO traces, the two-batch
//! illustration and step timing. All experiments run in `f64`.

mod fig1;
mod timing;
mod trace;
mod variance;

pub use fig1::{find_fig1_instance, illustrate_fig1, Fig1Config, Fig1Curve, Fig1Report, Fig1Variance};
pub use timing::{timing_overhead, TimingConfig, TimingRow};
pub use trace::{nelbo_trace_experiment, tail_mean, TraceConfig, TraceRow};
pub use variance::{
    dynamic_variance_experiment, static_variance_experiment, DynamicConfig, StaticConfig, VarianceReport,
};

use rand::Rng;

use crate::coefficients::{xavier_init, CoefficientProvider, ContextFreeCoefficient, ProviderKind};
use crate::engine::controlled_gradient;
use crate::error::{Error, Result};
use crate::models::{per_datum_gradients, DoublyStochasticModel};
use crate::noise::{eval_basis, sample_noise_for, BasisOrder};
use crate::stats;

/// One provider configuration compared in an experiment.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Arm {
    pub kind: ProviderKind,
    /// Hidden layer widths; only used by the amortized provider.
    pub hidden: Vec<usize>,
}

impl Arm {
    pub fn none() -> Self {
        Self { kind: ProviderKind::Uncontrolled, hidden: Vec::new() }
    }

    pub fn context_free() -> Self {
        Self { kind: ProviderKind::ContextFree, hidden: Vec::new() }
    }

    pub fn amortized(hidden: &[usize]) -> Self {
        Self { kind: ProviderKind::Amortized, hidden: hidden.to_vec() }
    }

    /// `none`, `context-free` or e.g. `amortized[32x32]`.
    pub fn label(&self) -> String {
        match self.kind {
            ProviderKind::Amortized => {
                let h: Vec<String> = self.hidden.iter().map(usize::to_string).collect();
                format!("amortized[{}]", h.join("x"))
            }
            k => k.name().to_string(),
        }
    }

    /// Fresh provider for `model`; networks get Xavier weights from `seed`.
    pub fn build<M: DoublyStochasticModel<f64> + ?Sized>(
        &self,
        model: &M,
        order: BasisOrder,
        seed: u64,
    ) -> Result<CoefficientProvider<f64>> {
        let params = model.param_dim();
        let features = order.features(model.noise_dim());
        Ok(match self.kind {
            ProviderKind::Uncontrolled => CoefficientProvider::Uncontrolled { params, features },
            ProviderKind::ContextFree => CoefficientProvider::ContextFree(ContextFreeCoefficient::zeros(params, features)),
            ProviderKind::Amortized => {
                let mut sizes = vec![model.context_dim()];
                sizes.extend(&self.hidden);
                sizes.push(params * features);
                CoefficientProvider::Amortized(xavier_init(&sizes, params, features, seed)?)
            }
        })
    }
}

/// Paired comparison of controlled and uncontrolled gradients at fixed `θ`
/// and fixed batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioMeasurement {
    /// `Var‖G̃‖ / Var‖Ĝ‖`.
    pub ratio: f64,
    /// `Tr Cov[G̃] / Tr Cov[Ĝ]`.
    pub trace_ratio: f64,
    pub draws: usize,
}

/// Redraws the noise `draws` times; both estimators see the same draws.
/// Gradients carry the `N/|B|` mini-batch scale.
#[allow(clippy::too_many_arguments)]
pub fn variance_ratio<M: DoublyStochasticModel<f64> + ?Sized, R: Rng + ?Sized>(
    model: &M,
    theta: &[f64],
    provider: &CoefficientProvider<f64>,
    batch: &[usize],
    order: BasisOrder,
    draws: usize,
    rng: &mut R,
) -> Result<RatioMeasurement> {
    if draws < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: draws });
    }
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let contexts: Vec<&[f64]> = batch.iter().map(|&b| model.context(b)).collect();
    let (coeffs, _) = provider.coefficients(&contexts)?;
    let scale = model.num_data() as f64 / batch.len() as f64;
    let p = model.param_dim();
    let mut hat_norms = Vec::with_capacity(draws);
    let mut tilde_norms = Vec::with_capacity(draws);
    let mut hat = Vec::with_capacity(draws * p);
    let mut tilde = Vec::with_capacity(draws * p);
    for _ in 0..draws {
        let noise = sample_noise_for::<f64, _>(rng, batch, 1, model.noise_dim())?;
        let grads = per_datum_gradients(model, &noise, theta)?;
        let basis = eval_basis(&noise, order.get())?;
        let cg = controlled_gradient(&grads, &basis, &coeffs, scale)?;
        hat_norms.push(cg.g_hat.iter().map(|v| v * v).sum::<f64>().sqrt());
        tilde_norms.push(cg.g_tilde.iter().map(|v| v * v).sum::<f64>().sqrt());
        hat.extend(cg.g_hat);
        tilde.extend(cg.g_tilde);
    }
    Ok(RatioMeasurement {
        ratio: stats::variance(&tilde_norms) / stats::variance(&hat_norms),
        trace_ratio: trace_cov(&tilde, p) / trace_cov(&hat, p),
        draws,
    })
}

fn trace_cov(rows: &[f64], width: usize) -> f64 {
    (0..width)
        .map(|i| {
            let col: Vec<f64> = rows.iter().skip(i).step_by(width).copied().collect();
            stats::variance(&col)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::CoefficientBlock;
    use crate::models::{QuadraticFamily, QuadraticSpec};
    use crate::rng;

    #[test]
    fn zero_coefficients_give_exactly_one() {
        let fam = QuadraticFamily::<f64>::synthetic(1, 20, 3, 2, 2).unwrap();
        let arm = Arm::context_free();
        let prov = arm.build(&fam, BasisOrder::LINEAR, 0).unwrap();
        let mut r = rng::stream(0, &[]);
        let m = variance_ratio(&fam, &[0.1, 0.2, 0.3], &prov, &[0, 5, 7], BasisOrder::LINEAR, 50, &mut r).unwrap();
        assert_eq!(m.ratio, 1.0);
        assert_eq!(m.trace_ratio, 1.0);
    }

    #[test]
    fn exact_affine_cancellation() {
        let b = vec![1.0, 0.5, -0.3, 2.0];
        let q = QuadraticSpec::diagonal(&[1.0, 2.0], vec![0.0, 0.0], b.clone(), 2).unwrap();
        let c: Vec<f64> = b.iter().map(|v| -v).collect();
        let mut cf = ContextFreeCoefficient::zeros(2, 2);
        cf.c_global = c;
        let prov = CoefficientProvider::ContextFree(cf);
        let mut r = rng::stream(2, &[]);
        let m = variance_ratio(&q, &[1.0, -1.0], &prov, &[0], BasisOrder::LINEAR, 100, &mut r).unwrap();
        assert!(m.ratio < 1e-20 && m.trace_ratio < 1e-20);
        assert!(matches!(
            variance_ratio(&q, &[1.0, -1.0], &prov, &[0], BasisOrder::LINEAR, 1, &mut r),
            Err(Error::InsufficientSamples { .. })
        ));
        let _ = CoefficientBlock::<f64>::zeros(1, 1, 1);
    }

    #[test]
    fn arm_labels_and_shapes() {
        assert_eq!(Arm::amortized(&[32, 32]).label(), "amortized[32x32]");
        assert_eq!(Arm::none().label(), "none");
        let fam = QuadraticFamily::<f64>::synthetic(1, 5, 3, 2, 4).unwrap();
        let p = Arm::amortized(&[8]).build(&fam, BasisOrder::QUADRATIC, 1).unwrap();
        assert_eq!(p.shape(), (3, 4));
        assert_eq!(p.num_params(), 4 * 8 + 8 + 8 * 12 + 12);
    }
}
