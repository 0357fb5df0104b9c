use rayon::prelude::*;

use super::{variance_ratio, Arm};
use crate::coefficients::CoefficientProvider;
use crate::data::sample_minibatch;
use crate::engine::{Optimizer, OptimizerConfig, TrainSettings, Trainer};
use crate::error::Result;
use crate::models::DoublyStochasticModel;
use crate::objectives::ObjectiveKind;
use crate::rng;

/// One row of a variance table.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceReport {
    /// `early`, `mid`, `late` for the default checkpoints, else `step<k>`.
    pub checkpoint: String,
    /// Model steps taken before the measurement.
    pub model_step: usize,
    /// Coefficient steps taken before the measurement.
    pub cv_step: usize,
    pub provider: String,
    pub objective: ObjectiveKind,
    pub ratio: f64,
    pub trace_ratio: f64,
    pub draws: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaticConfig {
    pub seed: u64,
    pub replicates: usize,
    pub checkpoints: Vec<usize>,
    /// Coefficient steps at which the ratio is measured; the largest is the run length.
    pub log_steps: Vec<usize>,
    pub arms: Vec<Arm>,
    pub settings: TrainSettings,
    pub model_opt: OptimizerConfig,
    pub coeff_opt: OptimizerConfig,
    pub draws: usize,
    /// Independent evaluation batches averaged per measurement.
    pub eval_batches: usize,
}

impl Default for StaticConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            replicates: 10,
            checkpoints: vec![10, 200, 1000],
            log_steps: vec![0, 10, 100, 1000],
            arms: vec![Arm::none(), Arm::context_free(), Arm::amortized(&[32, 32])],
            settings: TrainSettings::default(),
            model_opt: OptimizerConfig::adam(1e-2),
            coeff_opt: OptimizerConfig::adam(1e-2),
            draws: 100,
            eval_batches: 1,
        }
    }
}

pub(crate) fn checkpoint_label(step: usize, all: &[usize]) -> String {
    if all == [10, 200, 1000] {
        match step {
            10 => return "early".into(),
            200 => return "mid".into(),
            1000 => return "late".into(),
            _ => {}
        }
    }
    format!("step{step}")
}

/// Trains `θ` without control variates and returns it at each requested step.
fn uncontrolled_snapshots<M: DoublyStochasticModel<f64> + ?Sized>(
    model: &M,
    theta0: &[f64],
    cfg: &StaticConfig,
    replicate: u64,
) -> Result<Vec<Vec<f64>>> {
    let mut sorted = cfg.checkpoints.clone();
    sorted.sort_unstable();
    let mut trainer = Trainer {
        theta: theta0.to_vec(),
        provider: Arm::none().build(model, cfg.settings.order, 0)?,
        settings: cfg.settings,
        model_opt: Optimizer::new(cfg.model_opt, theta0.len())?,
        coeff_opt: Optimizer::new(cfg.coeff_opt, 0)?,
        rng: rng::stream(cfg.seed, &[replicate, 0]),
    };
    let mut snaps = Vec::with_capacity(sorted.len());
    let mut done = 0;
    for &c in &sorted {
        while done < c {
            trainer.step(model)?;
            done += 1;
        }
        snaps.push(trainer.theta.clone());
    }
    Ok(cfg.checkpoints.iter().map(|c| snaps[sorted.iter().position(|s| s == c).unwrap()].clone()).collect())
}

/// Mean ratio over the fixed evaluation batches of one (replicate, checkpoint).
fn measure<M: DoublyStochasticModel<f64> + ?Sized>(
    model: &M,
    theta: &[f64],
    provider: &CoefficientProvider<f64>,
    batches: &[Vec<usize>],
    cfg_order: crate::noise::BasisOrder,
    draws: usize,
    stream: &[u64],
    seed: u64,
) -> Result<(f64, f64)> {
    let mut ratio = 0.0;
    let mut trace = 0.0;
    for (i, batch) in batches.iter().enumerate() {
        let mut path = stream.to_vec();
        path.push(i as u64);
        let mut r = rng::stream(seed, &path);
        let m = variance_ratio(model, theta, provider, batch, cfg_order, draws, &mut r)?;
        ratio += m.ratio;
        trace += m.trace_ratio;
    }
    let n = batches.len() as f64;
    Ok((ratio / n, trace / n))
}

/// Freezes `θ` at each checkpoint of an uncontrolled run, then trains each
/// provider alone and measures the ratio along the way.
///
/// Arms share the coefficient-training batches, the evaluation batches and the
/// measurement noise, so the comparison between them is paired.
pub fn static_variance_experiment<M: DoublyStochasticModel<f64> + ?Sized>(
    model: &M,
    theta0: &[f64],
    cfg: &StaticConfig,
) -> Result<Vec<VarianceReport>> {
    let total_steps = cfg.log_steps.iter().copied().max().unwrap_or(0);
    let snapshots: Vec<Vec<Vec<f64>>> = (0..cfg.replicates as u64)
        .into_par_iter()
        .map(|r| uncontrolled_snapshots(model, theta0, cfg, r))
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize, usize)> = (0..cfg.replicates)
        .flat_map(|r| (0..cfg.checkpoints.len()).flat_map(move |c| (0..cfg.arms.len()).map(move |a| (r, c, a))))
        .collect();
    let rows: Vec<Vec<VarianceReport>> = jobs
        .par_iter()
        .map(|&(r, c, a)| -> Result<Vec<VarianceReport>> {
            let (ru, cu) = (r as u64, c as u64);
            let theta = &snapshots[r][c];
            let arm = &cfg.arms[a];
            let mut eval_rng = rng::stream(cfg.seed, &[ru, cu, 3]);
            let batches: Vec<Vec<usize>> = (0..cfg.eval_batches.max(1))
                .map(|_| sample_minibatch(&mut eval_rng, model.num_data(), cfg.settings.batch_size))
                .collect::<Result<_>>()?;
            let provider = arm.build(model, cfg.settings.order, rng::derive_seed(cfg.seed, &[ru, 1]))?;
            let n_params = provider.num_params();
            let mut trainer = Trainer {
                theta: theta.clone(),
                provider,
                settings: cfg.settings,
                model_opt: Optimizer::new(OptimizerConfig::sgd(0.0), theta.len())?,
                coeff_opt: Optimizer::new(cfg.coeff_opt, n_params)?,
                rng: rng::stream(cfg.seed, &[ru, cu, 2]),
            };
            let mut out = Vec::new();
            for step in 0..=total_steps {
                if cfg.log_steps.contains(&step) {
                    let (ratio, trace_ratio) = measure(
                        model,
                        theta,
                        &trainer.provider,
                        &batches,
                        cfg.settings.order,
                        cfg.draws,
                        &[ru, cu, 4, step as u64],
                        cfg.seed,
                    )?;
                    out.push(VarianceReport {
                        checkpoint: checkpoint_label(cfg.checkpoints[c], &cfg.checkpoints),
                        model_step: cfg.checkpoints[c],
                        cv_step: step,
                        provider: arm.label(),
                        objective: cfg.settings.objective,
                        ratio,
                        trace_ratio,
                        draws: cfg.draws,
                        seed: rng::derive_seed(cfg.seed, &[ru]),
                    });
                }
                if step < total_steps && n_params > 0 {
                    let batch = sample_minibatch(&mut trainer.rng, model.num_data(), cfg.settings.batch_size)?;
                    trainer.coefficient_step(model, &batch)?;
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicConfig {
    pub seed: u64,
    pub replicates: usize,
    pub iterations: usize,
    /// Joint-training steps at which the ratio is measured.
    pub checkpoints: Vec<usize>,
    pub arms: Vec<Arm>,
    pub settings: TrainSettings,
    pub model_opt: OptimizerConfig,
    pub coeff_opt: OptimizerConfig,
    pub draws: usize,
    pub eval_batches: usize,
}

impl Default for DynamicConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            replicates: 10,
            iterations: 1000,
            checkpoints: vec![10, 200, 1000],
            arms: vec![Arm::none(), Arm::context_free(), Arm::amortized(&[32, 32])],
            settings: TrainSettings::default(),
            model_opt: OptimizerConfig::adam(1e-2),
            coeff_opt: OptimizerConfig::adam(1e-2),
            draws: 100,
            eval_batches: 1,
        }
    }
}

/// Joint training with each provider; at every checkpoint the run pauses and
/// the ratio is measured at the current `θ` and provider.
pub fn dynamic_variance_experiment<M: DoublyStochasticModel<f64> + ?Sized>(
    model: &M,
    theta0: &[f64],
    cfg: &DynamicConfig,
) -> Result<Vec<VarianceReport>> {
    let jobs: Vec<(usize, usize)> =
        (0..cfg.replicates).flat_map(|r| (0..cfg.arms.len()).map(move |a| (r, a))).collect();
    let rows: Vec<Vec<VarianceReport>> = jobs
        .par_iter()
        .map(|&(r, a)| -> Result<Vec<VarianceReport>> {
            let ru = r as u64;
            let arm = &cfg.arms[a];
            let provider = arm.build(model, cfg.settings.order, rng::derive_seed(cfg.seed, &[ru, 1]))?;
            let n_params = provider.num_params();
            let mut trainer = Trainer {
                theta: theta0.to_vec(),
                provider,
                settings: cfg.settings,
                model_opt: Optimizer::new(cfg.model_opt, theta0.len())?,
                coeff_opt: Optimizer::new(cfg.coeff_opt, n_params)?,
                rng: rng::stream(cfg.seed, &[ru, 0]),
            };
            let mut out = Vec::new();
            for it in 0..=cfg.iterations {
                if cfg.checkpoints.contains(&it) {
                    let cu = it as u64;
                    let mut eval_rng = rng::stream(cfg.seed, &[ru, cu, 3]);
                    let batches: Vec<Vec<usize>> = (0..cfg.eval_batches.max(1))
                        .map(|_| sample_minibatch(&mut eval_rng, model.num_data(), cfg.settings.batch_size))
                        .collect::<Result<_>>()?;
                    let (ratio, trace_ratio) = measure(
                        model,
                        &trainer.theta,
                        &trainer.provider,
                        &batches,
                        cfg.settings.order,
                        cfg.draws,
                        &[ru, cu, 4],
                        cfg.seed,
                    )?;
                    out.push(VarianceReport {
                        checkpoint: checkpoint_label(it, &cfg.checkpoints),
                        model_step: it,
                        cv_step: it,
                        provider: arm.label(),
                        objective: cfg.settings.objective,
                        ratio,
                        trace_ratio,
                        draws: cfg.draws,
                        seed: rng::derive_seed(cfg.seed, &[ru]),
                    });
                }
                if it < cfg.iterations {
                    trainer.step(model)?;
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::QuadraticFamily;
    use crate::stats;

    fn family() -> QuadraticFamily<f64> {
        QuadraticFamily::synthetic(7, 50, 3, 2, 2).unwrap()
    }

    #[test]
    fn untrained_and_uncontrolled_rows_are_one() {
        let fam = family();
        let cfg = StaticConfig {
            replicates: 2,
            checkpoints: vec![5],
            log_steps: vec![0, 3],
            arms: vec![Arm::none(), Arm::context_free()],
            draws: 20,
            ..StaticConfig::default()
        };
        let rows = static_variance_experiment(&fam, &[0.0; 3], &cfg).unwrap();
        assert_eq!(rows.len(), 2 * 2 * 2);
        for r in &rows {
            if r.provider == "none" || r.cv_step == 0 {
                assert_eq!(r.ratio, 1.0, "{r:?}");
            }
        }
        assert_eq!(rows, static_variance_experiment(&fam, &[0.0; 3], &cfg).unwrap());
    }

    #[test]
    fn linear_amortized_cv_learns_the_affine_family() {
        let fam = family();
        let cfg = StaticConfig {
            replicates: 3,
            checkpoints: vec![10],
            log_steps: vec![1000],
            arms: vec![Arm::amortized(&[])],
            settings: TrainSettings { objective: ObjectiveKind::PartialGradients, ..TrainSettings::default() },
            coeff_opt: OptimizerConfig::adam(3e-2),
            ..StaticConfig::default()
        };
        let rows = static_variance_experiment(&fam, &[0.0; 3], &cfg).unwrap();
        let ratios: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
        assert!(stats::median(&ratios) < 0.05, "{ratios:?}");
    }

    #[test]
    fn dynamic_rows_cover_checkpoints() {
        let fam = family();
        let cfg = DynamicConfig {
            replicates: 1,
            iterations: 20,
            checkpoints: vec![0, 20],
            arms: vec![Arm::none(), Arm::amortized(&[4])],
            draws: 10,
            ..DynamicConfig::default()
        };
        let rows = dynamic_variance_experiment(&fam, &[0.0; 3], &cfg).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().filter(|r| r.provider == "none").all(|r| r.ratio == 1.0));
    }
}
