use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::DoublyStochasticModel;
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;

/// `f(ε, θ) = ½ θᵀHθ − bᵀθ − θᵀBε` with `H` symmetric positive definite.
///
/// The gradient `Hθ − b − Bε` is affine in the noise with Jacobian `−B`, so
/// a linear control variate can cancel the noise exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticSpec<T> {
    p: usize,
    d: usize,
    hessian: Vec<T>,
    linear: Vec<T>,
    coupling: Vec<T>,
    smoothness: T,
    strong_convexity: T,
    theta_star: Vec<T>,
    unit_context: [T; 1],
}

fn to_dmatrix<T: Scalar>(rows: usize, cols: usize, data: &[T]) -> DMatrix<f64> {
    DMatrix::from_row_iterator(rows, cols, data.iter().map(|v| v.as_f64()))
}

impl<T: Scalar> QuadraticSpec<T> {
    /// `hessian` is `P×P` and `coupling` is `P×D`, both row-major.
    pub fn new(p: usize, d: usize, hessian: Vec<T>, linear: Vec<T>, coupling: Vec<T>) -> Result<Self> {
        if p == 0 || d == 0 {
            return Err(Error::InvalidArgument("quadratic dimensions must be positive".into()));
        }
        if hessian.len() != p * p || linear.len() != p || coupling.len() != p * d {
            return Err(Error::Shape(format!(
                "expected H {p}x{p}, b {p}, B {p}x{d}; got {}, {}, {}",
                hessian.len(),
                linear.len(),
                coupling.len()
            )));
        }
        let h = to_dmatrix(p, p, &hessian);
        let asym = (&h - h.transpose()).abs().max();
        if asym > 1e-12 * (1.0 + h.abs().max()) {
            return Err(Error::InvalidArgument(format!("hessian is not symmetric (max asymmetry {asym})")));
        }
        let eig = h.clone().symmetric_eigen();
        let lo = eig.eigenvalues.min();
        let hi = eig.eigenvalues.max();
        if !(lo > 0.0) {
            return Err(Error::InvalidArgument(format!("hessian is not positive definite (min eigenvalue {lo})")));
        }
        let bvec = DVector::from_iterator(p, linear.iter().map(|v| v.as_f64()));
        let star = h
            .cholesky()
            .ok_or_else(|| Error::InvalidArgument("hessian cholesky failed".into()))?
            .solve(&bvec);
        Ok(Self {
            p,
            d,
            hessian,
            linear,
            coupling,
            smoothness: T::of(hi),
            strong_convexity: T::of(lo),
            theta_star: star.iter().map(|&v| T::of(v)).collect(),
            unit_context: [T::one()],
        })
    }

    pub fn diagonal(h_diag: &[T], linear: Vec<T>, coupling: Vec<T>, d: usize) -> Result<Self> {
        let p = h_diag.len();
        let mut h = vec![T::zero(); p * p];
        h_diag.iter().enumerate().for_each(|(i, &v)| h[i * p + i] = v);
        Self::new(p, d, h, linear, coupling)
    }

    pub fn param_dim(&self) -> usize {
        self.p
    }

    pub fn noise_dim(&self) -> usize {
        self.d
    }

    pub fn hessian(&self) -> &[T] {
        &self.hessian
    }

    pub fn linear(&self) -> &[T] {
        &self.linear
    }

    /// `B`, row-major `P×D`.
    pub fn coupling(&self) -> &[T] {
        &self.coupling
    }

    /// `λ_max(H)`.
    pub fn smoothness(&self) -> T {
        self.smoothness
    }

    /// `λ_min(H)`.
    pub fn strong_convexity(&self) -> T {
        self.strong_convexity
    }

    /// `H⁻¹ b`.
    pub fn theta_star(&self) -> &[T] {
        &self.theta_star
    }

    pub fn value_at(&self, eps: &[T], theta: &[T]) -> T {
        let (p, d) = (self.p, self.d);
        let mut acc = T::zero();
        for i in 0..p {
            let hrow: T = (0..p).map(|j| self.hessian[i * p + j] * theta[j]).sum();
            let brow: T = (0..d).map(|k| self.coupling[i * d + k] * eps[k]).sum();
            acc += theta[i] * (T::of(0.5) * hrow - self.linear[i] - brow);
        }
        acc
    }

    pub fn gradient_at(&self, eps: &[T], theta: &[T], out: &mut [T]) {
        let (p, d) = (self.p, self.d);
        for i in 0..p {
            let hrow: T = (0..p).map(|j| self.hessian[i * p + j] * theta[j]).sum();
            let brow: T = (0..d).map(|k| self.coupling[i * d + k] * eps[k]).sum();
            out[i] = hrow - self.linear[i] - brow;
        }
    }

    /// `E_ε[f(ε, θ)] = ½ θᵀHθ − bᵀθ`.
    pub fn expected_value(&self, theta: &[T]) -> T {
        let zero = vec![T::zero(); self.d];
        self.value_at(&zero, theta)
    }
}

/// `Hθ − b − Bε` with shape checks.
pub fn quad_per_datum_grad<T: Scalar>(spec: &QuadraticSpec<T>, eps: &[T], theta: &[T]) -> Result<Vec<T>> {
    if eps.len() != spec.d || theta.len() != spec.p {
        return Err(Error::Shape(format!(
            "eps {} vs D {}, theta {} vs P {}",
            eps.len(),
            spec.d,
            theta.len(),
            spec.p
        )));
    }
    let mut out = vec![T::zero(); spec.p];
    spec.gradient_at(eps, theta, &mut out);
    Ok(out)
}

/// A single quadratic viewed as a one-datum model with a constant context.
impl<T: Scalar> DoublyStochasticModel<T> for QuadraticSpec<T> {
    fn num_data(&self) -> usize {
        1
    }

    fn param_dim(&self) -> usize {
        self.p
    }

    fn noise_dim(&self) -> usize {
        self.d
    }

    fn context_dim(&self) -> usize {
        1
    }

    fn context(&self, _b: usize) -> &[T] {
        &self.unit_context
    }

    fn value(&self, _b: usize, eps: &[T], theta: &[T]) -> T {
        self.value_at(eps, theta)
    }

    fn gradient(&self, _b: usize, eps: &[T], theta: &[T], out: &mut [T]) {
        self.gradient_at(eps, theta, out)
    }
}

/// Per-datum quadratics whose noise coupling depends linearly on the context:
/// `B_n = B₀ + Σ_k y_nk A_k`. A context-aware linear control variate can
/// cancel every datum's noise; a shared one cannot.
#[derive(Debug, Clone)]
pub struct QuadraticFamily<T> {
    specs: Vec<QuadraticSpec<T>>,
    contexts: Vec<Vec<T>>,
}

impl<T: Scalar> QuadraticFamily<T> {
    pub fn new(specs: Vec<QuadraticSpec<T>>, contexts: Vec<Vec<T>>) -> Result<Self> {
        if specs.is_empty() || specs.len() != contexts.len() {
            return Err(Error::Shape(format!("{} specs vs {} contexts", specs.len(), contexts.len())));
        }
        let (p, d, c) = (specs[0].p, specs[0].d, contexts[0].len());
        if specs.iter().any(|s| s.p != p || s.d != d) || contexts.iter().any(|x| x.len() != c) {
            return Err(Error::Shape("family members must share dimensions".into()));
        }
        Ok(Self { specs, contexts })
    }

    /// Random family with `H = diag(1..2)`, Gaussian `b_n`, and contexts drawn
    /// from `N(0, I)`.
    pub fn synthetic(seed: u64, n: usize, p: usize, d: usize, context_dim: usize) -> Result<Self> {
        let mut r = rng::stream(seed, &[0xF0]);
        let mut normal = || T::of(r.sample::<f64, _>(StandardNormal));
        let h_diag: Vec<T> = (0..p).map(|i| T::of(1.0 + i as f64 / p.max(2) as f64)).collect();
        let base: Vec<T> = (0..p * d).map(|_| normal()).collect();
        let scale = T::of(1.0 / (context_dim.max(1) as f64).sqrt());
        let directions: Vec<Vec<T>> = (0..context_dim).map(|_| (0..p * d).map(|_| normal() * scale).collect()).collect();
        let mut specs = Vec::with_capacity(n);
        let mut contexts = Vec::with_capacity(n);
        for _ in 0..n {
            let y: Vec<T> = (0..context_dim).map(|_| normal()).collect();
            let mut coupling = base.clone();
            for (yk, a) in y.iter().zip(&directions) {
                coupling.iter_mut().zip(a).for_each(|(c, &v)| *c += *yk * v);
            }
            let linear: Vec<T> = (0..p).map(|_| normal()).collect();
            specs.push(QuadraticSpec::diagonal(&h_diag, linear, coupling, d)?);
            contexts.push(y);
        }
        Self::new(specs, contexts)
    }

    pub fn spec(&self, n: usize) -> &QuadraticSpec<T> {
        &self.specs[n]
    }
}

impl<T: Scalar> DoublyStochasticModel<T> for QuadraticFamily<T> {
    fn num_data(&self) -> usize {
        self.specs.len()
    }

    fn param_dim(&self) -> usize {
        self.specs[0].p
    }

    fn noise_dim(&self) -> usize {
        self.specs[0].d
    }

    fn context_dim(&self) -> usize {
        self.contexts[0].len()
    }

    fn context(&self, b: usize) -> &[T] {
        &self.contexts[b]
    }

    fn value(&self, b: usize, eps: &[T], theta: &[T]) -> T {
        self.specs[b].value_at(eps, theta)
    }

    fn gradient(&self, b: usize, eps: &[T], theta: &[T], out: &mut [T]) {
        self.specs[b].gradient_at(eps, theta, out)
    }
}
