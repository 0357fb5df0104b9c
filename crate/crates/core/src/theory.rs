//! Convergence checks for controlled SGD on quadratic instances.
//!
//! The control term is `c(ε, θ) = −B̃ε`, so the controlled gradient is
//! `Hθ − b − (B − B̃)ε`. Everything here is `f64`.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::models::QuadraticSpec;
use crate::quadrature::GaussHermite;
use crate::rng;
use crate::stats::CompensatedSum;

/// Relative slack when comparing a step size against its admissible bound.
const BOUND_SLACK: f64 = 1e-12;

/// `c = 1 − ηH(1 − η(2L + M))`.
pub fn rate_c(eta: f64, h: f64, l: f64, m: f64) -> f64 {
    1.0 - eta * h * (1.0 - eta * (2.0 * l + m))
}

/// `c̄ = 1 − ηH(1 − 2Lη)`.
pub fn rate_c_bar(eta: f64, h: f64, l: f64) -> f64 {
    1.0 - eta * h * (1.0 - 2.0 * l * eta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoremSpec {
    pub quadratic: QuadraticSpec<f64>,
    /// `B̃`, `P×D` row-major.
    pub cv_matrix: Vec<f64>,
    pub eta: f64,
}

impl TheoremSpec {
    pub fn new(quadratic: QuadraticSpec<f64>, cv_matrix: Vec<f64>, eta: f64) -> Result<Self> {
        if cv_matrix.len() != quadratic.param_dim() * quadratic.noise_dim() {
            return Err(Error::Shape(format!(
                "control matrix has {} entries, expected {}x{}",
                cv_matrix.len(),
                quadratic.param_dim(),
                quadratic.noise_dim()
            )));
        }
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(Error::InvalidArgument(format!("step size {eta} must be finite and non-negative")));
        }
        Ok(Self { quadratic, cv_matrix, eta })
    }

    /// Control matrix equal to the coupling: the noise cancels exactly.
    pub fn perfect(quadratic: QuadraticSpec<f64>, eta: f64) -> Result<Self> {
        let cv = quadratic.coupling().to_vec();
        Self::new(quadratic, cv, eta)
    }

    pub fn smoothness(&self) -> f64 {
        self.quadratic.smoothness()
    }

    pub fn strong_convexity(&self) -> f64 {
        self.quadratic.strong_convexity()
    }

    /// `‖B − B̃‖_F²`, the bound on `E‖∇f(ε, θ*) − c(ε, θ)‖²`.
    pub fn m_bar(&self) -> f64 {
        self.quadratic.coupling().iter().zip(&self.cv_matrix).map(|(b, c)| (b - c).powi(2)).sum()
    }

    /// The efficient-control-variate constant. Only a perfect control matrix
    /// satisfies it (with `M = 0`): otherwise the left side stays at `M̄ > 0`
    /// while the right side vanishes as `θ → θ*`.
    pub fn m(&self) -> Option<f64> {
        (self.m_bar() == 0.0).then_some(0.0)
    }

    pub fn rate_c(&self) -> Option<f64> {
        self.m().map(|m| rate_c(self.eta, self.strong_convexity(), self.smoothness(), m))
    }

    pub fn rate_c_bar(&self) -> f64 {
        rate_c_bar(self.eta, self.strong_convexity(), self.smoothness())
    }

    /// `1/(2L + M)`, if `M` exists.
    pub fn theorem1_step_bound(&self) -> Option<f64> {
        self.m().map(|m| 1.0 / (2.0 * self.smoothness() + m))
    }

    pub fn assumption4_step_bound(&self) -> f64 {
        1.0 / (2.0 * self.smoothness())
    }

    /// True when `c = 1`, i.e. the step sits on its bound and the rate says nothing.
    pub fn theorem1_vacuous(&self) -> bool {
        self.rate_c().is_some_and(|c| c >= 1.0 - BOUND_SLACK)
    }

    /// The controlled gradient for one noise draw.
    pub fn controlled_gradient(&self, eps: &[f64], theta: &[f64], out: &mut [f64]) {
        let d = self.quadratic.noise_dim();
        self.quadratic.gradient_at(eps, theta, out);
        for (i, o) in out.iter_mut().enumerate() {
            *o -= (0..d).map(|j| -self.cv_matrix[i * d + j] * eps[j]).sum::<f64>();
        }
    }

    fn distance_sq(&self, theta: &[f64]) -> f64 {
        theta.iter().zip(self.quadratic.theta_star()).map(|(a, b)| (a - b).powi(2)).sum()
    }
}

/// Seed-averaged `E‖θ_t − θ*‖²` for `t = 0..=T` with its standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub mean: Vec<f64>,
    pub standard_error: Vec<f64>,
    pub seeds: usize,
}

fn single_run(spec: &TheoremSpec, theta0: &[f64], steps: usize, seed: u64, replicate: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, &[replicate]);
    let d = spec.quadratic.noise_dim();
    let mut theta = theta0.to_vec();
    let mut eps = vec![0.0; d];
    let mut g = vec![0.0; theta.len()];
    let mut out = Vec::with_capacity(steps + 1);
    out.push(spec.distance_sq(&theta));
    for _ in 0..steps {
        eps.iter_mut().for_each(|e| *e = r.sample(StandardNormal));
        spec.controlled_gradient(&eps, &theta, &mut g);
        theta.iter_mut().zip(&g).for_each(|(t, gi)| *t -= spec.eta * gi);
        out.push(spec.distance_sq(&theta));
    }
    out
}

/// Plain SGD with the control term, batch of one, replicated over seeds in
/// parallel. Replicate `k` uses substream `(seed, k)`; the average is taken in
/// replicate order so the result does not depend on thread scheduling.
pub fn run_controlled_sgd(
    spec: &TheoremSpec,
    theta0: &[f64],
    steps: usize,
    seeds: usize,
    seed: u64,
) -> Result<Trajectory> {
    if steps == 0 || seeds == 0 {
        return Err(Error::InvalidArgument("need at least one step and one seed".into()));
    }
    if theta0.len() != spec.quadratic.param_dim() {
        return Err(Error::Shape(format!("theta0 has {} entries, expected {}", theta0.len(), spec.quadratic.param_dim())));
    }
    let runs: Vec<Vec<f64>> =
        (0..seeds as u64).into_par_iter().map(|k| single_run(spec, theta0, steps, seed, k)).collect();
    let n = seeds as f64;
    let mut mean = Vec::with_capacity(steps + 1);
    let mut se = Vec::with_capacity(steps + 1);
    for t in 0..=steps {
        let mut s = CompensatedSum::default();
        runs.iter().for_each(|r| s.add(r[t]));
        let m = s.value() / n;
        let se_t = if seeds > 1 {
            let mut v = CompensatedSum::default();
            runs.iter().for_each(|r| v.add((r[t] - m).powi(2)));
            (v.value() / (n - 1.0) / n).sqrt()
        } else {
            0.0
        };
        mean.push(m);
        se.push(se_t);
    }
    Ok(Trajectory { mean, standard_error: se, seeds })
}

fn check_step(eta: f64, bound: f64) -> Result<()> {
    if eta > bound * (1.0 + BOUND_SLACK) {
        Err(Error::StepSizeTooLarge { eta, bound })
    } else {
        Ok(())
    }
}

/// `cᵗ ‖θ₀ − θ*‖²`. Needs a perfect control matrix and `η ≤ 1/(2L + M)`.
pub fn theorem1_bound(spec: &TheoremSpec, theta0: &[f64], t: usize) -> Result<f64> {
    let bound = spec.theorem1_step_bound().ok_or_else(|| {
        Error::Assumption(format!(
            "control matrix is not exact (M̄ = {}), no finite M; use the relaxed bound",
            spec.m_bar()
        ))
    })?;
    check_step(spec.eta, bound)?;
    let c = spec.rate_c().unwrap_or(1.0);
    Ok(c.powi(t as i32) * spec.distance_sq(theta0))
}

/// `c̄ᵗ ‖θ₀ − θ*‖² + 2η²M̄(1 − c̄ᵗ)/(1 − c̄)`. Needs `η ≤ 1/(2L)`.
pub fn assumption4_bound(spec: &TheoremSpec, theta0: &[f64], t: usize) -> Result<f64> {
    check_step(spec.eta, spec.assumption4_step_bound())?;
    let cb = spec.rate_c_bar();
    let ct = cb.powi(t as i32);
    let noise = 2.0 * spec.eta.powi(2) * spec.m_bar();
    // At c̄ = 1 the geometric sum degenerates to t terms.
    let tail = if 1.0 - cb > 0.0 { noise * (1.0 - ct) / (1.0 - cb) } else { noise * t as f64 };
    Ok(ct * spec.distance_sq(theta0) + tail)
}

/// `2η²M̄/(1 − c̄)`, the limit of the relaxed bound.
pub fn assumption4_floor(spec: &TheoremSpec) -> f64 {
    2.0 * spec.eta.powi(2) * spec.m_bar() / (1.0 - spec.rate_c_bar())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LemmaReport {
    pub probes: usize,
    /// Largest `LHS − RHS` seen; non-positive means the inequality held everywhere.
    pub max_violation: f64,
    /// Probes whose violation exceeded the tolerance.
    pub violations: usize,
}

/// `(1/2L) E‖∇f(ε,θ) − ∇f(ε,θ*)‖² ≤ E[f(ε,θ) − f(ε,θ*)]` at random `θ` near
/// `θ*`, with the expectations by Gauss–Hermite quadrature.
pub fn verify_lemma_cocoercivity<R: Rng + ?Sized>(
    spec: &QuadraticSpec<f64>,
    probes: usize,
    tolerance: f64,
    rng: &mut R,
) -> Result<LemmaReport> {
    if probes == 0 {
        return Err(Error::InvalidArgument("need at least one probe".into()));
    }
    let (p, d) = (spec.param_dim(), spec.noise_dim());
    // The integrands are polynomials of degree at most two in ε.
    let gh = GaussHermite::new(3);
    let star = spec.theta_star().to_vec();
    let l = spec.smoothness();
    let mut max_violation = f64::NEG_INFINITY;
    let mut violations = 0;
    let mut g1 = vec![0.0; p];
    let mut g2 = vec![0.0; p];
    for _ in 0..probes {
        let scale = 10f64.powf(rng.random_range(-2.0..1.0));
        let theta: Vec<f64> = star.iter().map(|s| s + scale * rng.sample::<f64, _>(StandardNormal)).collect();
        let lhs = gh.expect_nd(d, |eps| {
            spec.gradient_at(eps, &theta, &mut g1);
            spec.gradient_at(eps, &star, &mut g2);
            g1.iter().zip(&g2).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        }) / (2.0 * l);
        let rhs = gh.expect_nd(d, |eps| spec.value_at(eps, &theta) - spec.value_at(eps, &star));
        let v = lhs - rhs;
        max_violation = max_violation.max(v);
        if v > tolerance {
            violations += 1;
        }
    }
    Ok(LemmaReport { probes, max_violation, violations })
}

/// A random well-conditioned quadratic: `H = AAᵀ/P + 0.1 I`, Gaussian `b`, `B`.
pub fn random_quadratic<R: Rng + ?Sized>(rng: &mut R, p: usize, d: usize) -> Result<QuadraticSpec<f64>> {
    let mut normal = || -> f64 { rng.sample(StandardNormal) };
    let a: Vec<f64> = (0..p * p).map(|_| normal()).collect();
    let mut h = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..p {
            h[i * p + j] = (0..p).map(|k| a[i * p + k] * a[j * p + k]).sum::<f64>() / p as f64;
        }
        h[i * p + i] += 0.1;
    }
    let b = (0..p).map(|_| normal()).collect();
    let coupling = (0..p * d).map(|_| normal()).collect();
    QuadraticSpec::new(p, d, h, b, coupling)
}

/// One row of a trajectory-versus-bound table.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundRow {
    pub t: usize,
    pub empirical: f64,
    pub bound: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    Theorem1,
    Assumption4,
}

/// Runs the trajectory and pairs it with the bound that applies: the linear
/// rate for an exact control matrix, the relaxed bound otherwise.
pub fn trajectory_table(
    spec: &TheoremSpec,
    theta0: &[f64],
    steps: usize,
    seeds: usize,
    seed: u64,
) -> Result<(BoundKind, Vec<BoundRow>)> {
    let kind = if spec.m().is_some() { BoundKind::Theorem1 } else { BoundKind::Assumption4 };
    let traj = run_controlled_sgd(spec, theta0, steps, seeds, seed)?;
    let rows = traj
        .mean
        .iter()
        .enumerate()
        .map(|(t, &empirical)| {
            let bound = match kind {
                BoundKind::Theorem1 => theorem1_bound(spec, theta0, t)?,
                BoundKind::Assumption4 => assumption4_bound(spec, theta0, t)?,
            };
            Ok(BoundRow { t, empirical, bound, seeds })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((kind, rows))
}
