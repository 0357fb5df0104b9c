use rand::Rng;
use rand_distr::StandardNormal;

use crate::coefficients::empirical_optimal_coefficient;
use crate::error::{Error, Result};
use crate::models::{DoublyStochasticModel, LogisticRegression};
use crate::rng;
use crate::stats;

/// Two single-datum mini-batches of a one-dimensional logistic regression;
/// the gradient studied is the one with respect to the posterior mean.
#[derive(Debug, Clone, PartialEq)]
pub struct Fig1Config {
    pub seed: u64,
    pub x: [f64; 2],
    pub y: [f64; 2],
    /// Variational mean and log standard deviation at which gradients are taken.
    pub mean: f64,
    pub log_scale: f64,
    pub draws: usize,
    pub grid_points: usize,
    pub grid_limit: f64,
}

impl Default for Fig1Config {
    fn default() -> Self {
        Self {
            seed: 0,
            x: [0.5, 2.0],
            y: [1.0, 0.0],
            mean: 0.5,
            log_scale: 0.0,
            draws: 1_000_000,
            grid_points: 61,
            grid_limit: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fig1Curve {
    pub batch: usize,
    pub epsilon: f64,
    pub g_value: f64,
}

/// Estimator variances for one batch under the three schemes.
#[derive(Debug, Clone, PartialEq)]
pub struct Fig1Variance {
    pub batch: usize,
    pub no_cv: f64,
    pub shared_cv: f64,
    pub per_batch_cv: f64,
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fig1Report {
    pub curves: Vec<Fig1Curve>,
    pub variances: Vec<Fig1Variance>,
    pub shared_coefficient: f64,
    /// Both batches have the same context, so sharing loses nothing.
    pub degenerate: bool,
}

impl Fig1Report {
    /// The shared coefficient makes some batch worse than no control variate
    /// while per-batch coefficients improve both.
    pub fn shows_harm(&self) -> bool {
        self.variances.iter().any(|v| v.shared_cv > v.no_cv) && self.variances.iter().all(|v| v.per_batch_cv < v.no_cv)
    }
}

fn mean_gradient(model: &LogisticRegression<f64>, b: usize, eps: f64, theta: &[f64], out: &mut [f64]) -> f64 {
    model.gradient(b, &[eps], theta, out);
    // Single-datum batch: scale N/|B| = N.
    out[0] * model.num_data() as f64
}

pub fn illustrate_fig1(cfg: &Fig1Config) -> Result<Fig1Report> {
    if cfg.draws < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: cfg.draws });
    }
    let model = LogisticRegression::new(vec![vec![cfg.x[0]], vec![cfg.x[1]]], cfg.y.to_vec())?;
    let theta = [cfg.mean, cfg.log_scale];
    let mut scratch = [0.0; 2];

    let mut curves = Vec::with_capacity(2 * cfg.grid_points);
    for b in 0..2 {
        for k in 0..cfg.grid_points {
            let e = if cfg.grid_points == 1 {
                0.0
            } else {
                -cfg.grid_limit + 2.0 * cfg.grid_limit * k as f64 / (cfg.grid_points - 1) as f64
            };
            curves.push(Fig1Curve { batch: b, epsilon: e, g_value: mean_gradient(&model, b, e, &theta, &mut scratch) });
        }
    }

    // One set of draws serves both batches, so identical contexts give
    // identical coefficients and in-sample optimality is exact.
    let mut r = rng::stream(cfg.seed, &[0xF1]);
    let eps: Vec<f64> = (0..cfg.draws).map(|_| r.sample(StandardNormal)).collect();
    let g: Vec<Vec<f64>> = (0..2)
        .map(|b| eps.iter().map(|&e| mean_gradient(&model, b, e, &theta, &mut scratch)).collect())
        .collect();
    let coeffs: Vec<f64> = g
        .iter()
        .map(|gb| empirical_optimal_coefficient(gb, 1, &eps, 1, 0.0).map(|c| c[0]))
        .collect::<Result<_>>()?;
    let var_eps = stats::variance(&eps);
    let shared = g.iter().map(|gb| stats::covariance(gb, &eps)).sum::<f64>() / (2.0 * var_eps);

    let residual_var = |gb: &[f64], c: f64| {
        let res: Vec<f64> = gb.iter().zip(&eps).map(|(gv, e)| gv - c * e).collect();
        stats::variance(&res)
    };
    let variances = (0..2)
        .map(|b| Fig1Variance {
            batch: b,
            no_cv: stats::variance(&g[b]),
            shared_cv: residual_var(&g[b], shared),
            per_batch_cv: residual_var(&g[b], coeffs[b]),
            coefficient: coeffs[b],
        })
        .collect();
    Ok(Fig1Report {
        curves,
        variances,
        shared_coefficient: shared,
        degenerate: cfg.x[0] == cfg.x[1] && cfg.y[0] == cfg.y[1],
    })
}

/// Grid search over context pairs for an instance where the shared
/// coefficient harms one batch; screens with `screen_draws` and confirms the
/// first hit at the configured draw count.
pub fn find_fig1_instance(base: &Fig1Config, grid: &[f64], screen_draws: usize) -> Result<Option<Fig1Config>> {
    for &x0 in grid {
        for &x1 in grid {
            for (y0, y1) in [(1.0, 0.0), (0.0, 1.0), (1.0, 1.0), (0.0, 0.0)] {
                if x0 == x1 && y0 == y1 {
                    continue;
                }
                let cfg = Fig1Config { x: [x0, x1], y: [y0, y1], ..base.clone() };
                let screen = illustrate_fig1(&Fig1Config { draws: screen_draws, grid_points: 1, ..cfg.clone() })?;
                if screen.shows_harm() && illustrate_fig1(&cfg)?.shows_harm() {
                    return Ok(Some(cfg));
                }
            }
        }
    }
    Ok(None)
}
