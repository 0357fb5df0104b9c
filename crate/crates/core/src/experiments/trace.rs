use std::collections::VecDeque;

use rayon::prelude::*;

use super::Arm;
use crate::coefficients::ProviderKind;
use crate::engine::{Optimizer, OptimizerConfig, TrainSettings, Trainer};
use crate::error::{Error, Result};
use crate::models::{nelbo_estimate, DoublyStochasticModel};
use crate::objectives::ObjectiveKind;
use crate::rng;
use crate::stats;

#[derive(Debug, Clone, PartialEq)]
pub struct TraceConfig {
    pub seed: u64,
    pub replicates: usize,
    pub iterations: usize,
    pub nelbo_samples: usize,
    /// Record every k-th iteration (the last iteration is always recorded).
    pub record_every: usize,
    /// Skip recording up to and including this iteration.
    pub record_after: usize,
    /// Provider and coefficient objective per method. The uncontrolled
    /// baseline is added when missing.
    pub methods: Vec<(Arm, ObjectiveKind)>,
    pub settings: TrainSettings,
    pub model_opt: OptimizerConfig,
    pub coeff_opt: OptimizerConfig,
    /// Trailing window for the gradient-norm variance column.
    pub window: usize,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            replicates: 5,
            iterations: 2000,
            nelbo_samples: 100,
            record_every: 1,
            record_after: 0,
            methods: vec![
                (Arm::none(), ObjectiveKind::SquaredDifference),
                (Arm::amortized(&[32, 32]), ObjectiveKind::GradientSum),
                (Arm::amortized(&[32, 32]), ObjectiveKind::SquaredDifference),
            ],
            settings: TrainSettings::default(),
            model_opt: OptimizerConfig::adam(1e-2),
            coeff_opt: OptimizerConfig::adam(1e-2),
            window: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    /// Iterations completed when the row was recorded.
    pub iter: usize,
    pub method: String,
    pub replicate: usize,
    pub nelbo: f64,
    /// `nelbo` minus the uncontrolled run of the same replicate.
    pub diff: f64,
    /// Variance of the applied gradient norm over the trailing window.
    pub grad_norm_var: f64,
}

pub(crate) fn method_label(arm: &Arm, objective: ObjectiveKind) -> String {
    if arm.kind == ProviderKind::Uncontrolled {
        "none".into()
    } else {
        format!("{}/{}", arm.label(), objective.name())
    }
}

/// Joint training for every method; the full-data NELBO is recorded along the
/// way. Methods of one replicate share mini-batches, noise and the NELBO noise,
/// so their differences are paired.
pub fn nelbo_trace_experiment<M: DoublyStochasticModel<f64> + ?Sized>(
    model: &M,
    theta0: &[f64],
    cfg: &TraceConfig,
) -> Result<Vec<TraceRow>> {
    if cfg.record_every == 0 || cfg.nelbo_samples == 0 {
        return Err(Error::InvalidArgument("record_every and nelbo_samples must be positive".into()));
    }
    let mut methods = cfg.methods.clone();
    if !methods.iter().any(|(a, _)| a.kind == ProviderKind::Uncontrolled) {
        methods.insert(0, (Arm::none(), ObjectiveKind::SquaredDifference));
    }
    let jobs: Vec<(usize, usize)> = (0..cfg.replicates).flat_map(|r| (0..methods.len()).map(move |m| (r, m))).collect();
    let traces: Vec<Vec<TraceRow>> = jobs
        .par_iter()
        .map(|&(r, m)| -> Result<Vec<TraceRow>> {
            let ru = r as u64;
            let (arm, objective) = &methods[m];
            let provider = arm.build(model, cfg.settings.order, rng::derive_seed(cfg.seed, &[ru, 1]))?;
            let n_params = provider.num_params();
            let mut trainer = Trainer {
                theta: theta0.to_vec(),
                provider,
                settings: TrainSettings { objective: *objective, ..cfg.settings },
                model_opt: Optimizer::new(cfg.model_opt, theta0.len())?,
                coeff_opt: Optimizer::new(cfg.coeff_opt, n_params)?,
                rng: rng::stream(cfg.seed, &[ru, 0]),
            };
            let label = method_label(arm, *objective);
            let mut window = VecDeque::with_capacity(cfg.window + 1);
            let mut rows = Vec::new();
            for it in 1..=cfg.iterations {
                let report = trainer.step(model)?;
                window.push_back(report.controlled_norm);
                if window.len() > cfg.window.max(2) {
                    window.pop_front();
                }
                if it > cfg.record_after && (it % cfg.record_every == 0 || it == cfg.iterations) {
                    let nelbo = nelbo_estimate(
                        model,
                        &trainer.theta,
                        cfg.nelbo_samples,
                        rng::derive_seed(cfg.seed, &[ru, it as u64, 5]),
                    )?;
                    let w: Vec<f64> = window.iter().copied().collect();
                    rows.push(TraceRow {
                        iter: it,
                        method: label.clone(),
                        replicate: r,
                        nelbo,
                        diff: 0.0,
                        grad_norm_var: if w.len() >= 2 { stats::variance(&w) } else { 0.0 },
                    });
                }
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let per_replicate = methods.len();
    let base_idx = methods.iter().position(|(a, _)| a.kind == ProviderKind::Uncontrolled).unwrap();
    let mut out = Vec::new();
    for r in 0..cfg.replicates {
        let base: Vec<f64> = traces[r * per_replicate + base_idx].iter().map(|t| t.nelbo).collect();
        for m in 0..per_replicate {
            for (row, b) in traces[r * per_replicate + m].iter().zip(&base) {
                out.push(TraceRow { diff: row.nelbo - b, ..row.clone() });
            }
        }
    }
    Ok(out)
}

/// Mean NELBO of one method and replicate over rows with `iter > after`.
pub fn tail_mean(rows: &[TraceRow], method: &str, replicate: usize, after: usize) -> f64 {
    let xs: Vec<f64> = rows
        .iter()
        .filter(|r| r.method == method && r.replicate == replicate && r.iter > after)
        .map(|r| r.nelbo)
        .collect();
    stats::mean(&xs)
}
