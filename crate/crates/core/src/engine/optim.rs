use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        Self { kind: OptimizerKind::Sgd, ..Self::adam(learning_rate) }
    }

    /// Adam with `β₁ = 0.9`, `β₂ = 0.999`, `ε = 1e-8`.
    pub fn adam(learning_rate: f64) -> Self {
        Self { kind: OptimizerKind::Adam, learning_rate, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    /// A zero learning rate is allowed and freezes the parameters.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {} must be finite and >= 0", self.learning_rate)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidArgument(format!("{name} = {b} must lie in [0, 1)")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidArgument("adam epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// `θ − η g`.
pub fn sgd_step<T: Scalar>(theta: &[T], grad: &[T], eta: T) -> Vec<T> {
    theta.iter().zip(grad).map(|(&t, &g)| t - eta * g).collect()
}

/// Bias-corrected Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(dim: usize) -> Self {
        Self { m: vec![T::zero(); dim], v: vec![T::zero(); dim], t: 0 }
    }
}

pub fn adam_step<T: Scalar>(state: &mut AdamState<T>, config: &OptimizerConfig, theta: &mut [T], grad: &[T]) {
    state.t += 1;
    let (b1, b2) = (T::of(config.beta1), T::of(config.beta2));
    let (one, lr, eps) = (T::one(), T::of(config.learning_rate), T::of(config.eps));
    let t = state.t as i32;
    let c1 = one - b1.powi(t);
    let c2 = one - b2.powi(t);
    for (((th, &g), m), v) in theta.iter_mut().zip(grad).zip(&mut state.m).zip(&mut state.v) {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *th -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// SGD or Adam with its state.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    pub config: OptimizerConfig,
    adam: AdamState<T>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(config: OptimizerConfig, dim: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, adam: AdamState::new(dim) })
    }

    pub fn steps(&self) -> u64 {
        self.adam.t
    }

    pub fn step(&mut self, theta: &mut [T], grad: &[T]) -> Result<()> {
        if theta.len() != grad.len() || theta.len() != self.adam.m.len() {
            return Err(Error::Shape(format!(
                "optimizer sized for {}, got theta {} and gradient {}",
                self.adam.m.len(),
                theta.len(),
                grad.len()
            )));
        }
        match self.config.kind {
            OptimizerKind::Sgd => {
                self.adam.t += 1;
                let eta = T::of(self.config.learning_rate);
                theta.iter_mut().zip(grad).for_each(|(t, &g)| *t -= eta * g);
            }
            OptimizerKind::Adam => adam_step(&mut self.adam, &self.config, theta, grad),
        }
        Ok(())
    }
}
