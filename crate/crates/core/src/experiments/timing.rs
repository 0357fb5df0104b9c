use std::time::Instant;

use super::trace::method_label;
use super::Arm;
use crate::engine::{Optimizer, OptimizerConfig, TrainSettings, Trainer};
use crate::error::Result;
use crate::models::DoublyStochasticModel;
use crate::objectives::ObjectiveKind;
use crate::rng;
use crate::stats;

#[derive(Debug, Clone, PartialEq)]
pub struct TimingConfig {
    pub seed: u64,
    pub repetitions: usize,
    pub steps_per_repetition: usize,
    pub methods: Vec<(Arm, ObjectiveKind)>,
    pub settings: TrainSettings,
    pub model_opt: OptimizerConfig,
    pub coeff_opt: OptimizerConfig,
}

impl Default for TimingConfig {
    fn default() -> Self {
        let mut methods = vec![(Arm::none(), ObjectiveKind::SquaredDifference)];
        for k in ObjectiveKind::ALL {
            methods.push((Arm::context_free(), k));
            methods.push((Arm::amortized(&[32, 32]), k));
        }
        Self {
            seed: 0,
            repetitions: 100,
            steps_per_repetition: 10,
            methods,
            settings: TrainSettings::default(),
            model_opt: OptimizerConfig::adam(1e-2),
            coeff_opt: OptimizerConfig::adam(1e-2),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub method: String,
    pub repetitions: usize,
    /// Mean and standard deviation of the per-step time, milliseconds.
    pub mean_ms: f64,
    pub std_ms: f64,
}

/// Wall-clock time per alternating step. Each repetition starts a fresh run
/// and times `steps_per_repetition` steps. Runs sequentially so the methods
/// do not compete for cores.
pub fn timing_overhead<M: DoublyStochasticModel<f64> + ?Sized>(
    model: &M,
    theta0: &[f64],
    cfg: &TimingConfig,
) -> Result<Vec<TimingRow>> {
    let mut rows = Vec::with_capacity(cfg.methods.len());
    for (m, (arm, objective)) in cfg.methods.iter().enumerate() {
        let mut per_step = Vec::with_capacity(cfg.repetitions);
        for rep in 0..cfg.repetitions {
            let provider = arm.build(model, cfg.settings.order, rng::derive_seed(cfg.seed, &[rep as u64, 1]))?;
            let n_params = provider.num_params();
            let mut trainer = Trainer {
                theta: theta0.to_vec(),
                provider,
                settings: TrainSettings { objective: *objective, ..cfg.settings },
                model_opt: Optimizer::new(cfg.model_opt, theta0.len())?,
                coeff_opt: Optimizer::new(cfg.coeff_opt, n_params)?,
                rng: rng::stream(cfg.seed, &[rep as u64, m as u64]),
            };
            let start = Instant::now();
            for _ in 0..cfg.steps_per_repetition {
                trainer.step(model)?;
            }
            per_step.push(start.elapsed().as_secs_f64() * 1e3 / cfg.steps_per_repetition.max(1) as f64);
        }
        rows.push(TimingRow {
            method: method_label(arm, *objective),
            repetitions: cfg.repetitions,
            mean_ms: stats::mean(&per_step),
            std_ms: if per_step.len() > 1 { stats::variance(&per_step).sqrt() } else { 0.0 },
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_logreg;

    #[test]
    fn amortized_costs_more_than_none() {
        let (ds, _) = synth_logreg(1, 200, 8, 4).unwrap();
        let model = ds.to_logistic::<f64>().unwrap();
        let theta0 = model.initial_state().theta;
        let cfg = TimingConfig {
            repetitions: 20,
            methods: vec![
                (Arm::none(), ObjectiveKind::SquaredDifference),
                (Arm::context_free(), ObjectiveKind::SquaredDifference),
                (Arm::amortized(&[32, 32]), ObjectiveKind::SquaredDifference),
            ],
            ..TimingConfig::default()
        };
        let rows = timing_overhead(&model, &theta0, &cfg).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows[2].mean_ms >= rows[0].mean_ms, "{rows:?}");
    }
}
