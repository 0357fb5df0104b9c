//! Control variate coefficient blocks and the providers that produce them.

mod checkpoint;
mod net;
mod oracle;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use net::{xavier_init, ForwardCache, RecognitionNet};
pub use oracle::empirical_optimal_coefficient;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Coefficients `c_bi` laid out `[batch][P][F]` where `F = K·D`.
/// An all-zero block is the uncontrolled estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientBlock<T> {
    c: Vec<T>,
    batch: usize,
    params: usize,
    features: usize,
}

impl<T: Scalar> CoefficientBlock<T> {
    pub fn zeros(batch: usize, params: usize, features: usize) -> Self {
        Self { c: vec![T::zero(); batch * params * features], batch, params, features }
    }

    pub fn from_values(c: Vec<T>, batch: usize, params: usize, features: usize) -> Result<Self> {
        if c.len() != batch * params * features {
            return Err(Error::Shape(format!(
                "coefficient block has {} values, expected {batch}x{params}x{features}",
                c.len()
            )));
        }
        Ok(Self { c, batch, params, features })
    }

    /// Repeats a single `[P][F]` block for every batch element.
    pub fn broadcast(per_datum: &[T], batch: usize, params: usize, features: usize) -> Result<Self> {
        if per_datum.len() != params * features {
            return Err(Error::Shape(format!("{} values for a {params}x{features} block", per_datum.len())));
        }
        let c = (0..batch).flat_map(|_| per_datum.iter().copied()).collect();
        Ok(Self { c, batch, params, features })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn params(&self) -> usize {
        self.params
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn values(&self) -> &[T] {
        &self.c
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.c
    }

    /// `c_bi`, a vector of length `F`.
    #[inline]
    pub fn row(&self, b: usize, i: usize) -> &[T] {
        let start = (b * self.params + i) * self.features;
        &self.c[start..start + self.features]
    }

    #[inline]
    pub fn row_mut(&mut self, b: usize, i: usize) -> &mut [T] {
        let start = (b * self.params + i) * self.features;
        &mut self.c[start..start + self.features]
    }

    /// The `[P][F]` block of one batch element.
    pub fn datum(&self, b: usize) -> &[T] {
        let n = self.params * self.features;
        &self.c[b * n..(b + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.c.iter().all(|v| v.is_finite())
    }
}

/// One optimizable `[P][F]` block shared by every datum.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextFreeCoefficient<T> {
    pub c_global: Vec<T>,
    params: usize,
    features: usize,
}

impl<T: Scalar> ContextFreeCoefficient<T> {
    pub fn zeros(params: usize, features: usize) -> Self {
        Self { c_global: vec![T::zero(); params * features], params, features }
    }

    pub fn forward(&self, batch: usize) -> CoefficientBlock<T> {
        CoefficientBlock::broadcast(&self.c_global, batch, self.params, self.features).expect("shape fixed at construction")
    }

    /// Broadcasting adjoint: sums the upstream gradient over the batch.
    pub fn backward(&self, upstream: &CoefficientBlock<T>) -> Result<Vec<T>> {
        if upstream.params != self.params || upstream.features != self.features {
            return Err(Error::Shape("upstream block does not match the coefficient shape".into()));
        }
        let mut g = vec![T::zero(); self.c_global.len()];
        for b in 0..upstream.batch {
            g.iter_mut().zip(upstream.datum(b)).for_each(|(g, &u)| *g += u);
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProviderKind {
    Uncontrolled,
    ContextFree,
    Amortized,
}

impl ProviderKind {
    pub fn name(self) -> &'static str {
        match self {
            ProviderKind::Uncontrolled => "none",
            ProviderKind::ContextFree => "context-free",
            ProviderKind::Amortized => "amortized",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" | "uncontrolled" => Ok(ProviderKind::Uncontrolled),
            "context-free" | "context_free" => Ok(ProviderKind::ContextFree),
            "amortized" | "amortised" => Ok(ProviderKind::Amortized),
            other => Err(Error::Config(format!("unknown provider kind '{other}'"))),
        }
    }
}

/// Source of coefficient blocks for a mini-batch.
#[derive(Debug, Clone)]
pub enum CoefficientProvider<T> {
    /// Always zero; has no trainable parameters.
    Uncontrolled { params: usize, features: usize },
    ContextFree(ContextFreeCoefficient<T>),
    Amortized(RecognitionNet<T>),
}

/// Whatever a provider needs to back-propagate into its own parameters.
#[derive(Debug, Clone)]
pub enum ProviderCache<T> {
    Stateless,
    Network(ForwardCache<T>),
}

impl<T: Scalar> CoefficientProvider<T> {
    pub fn kind(&self) -> ProviderKind {
        match self {
            CoefficientProvider::Uncontrolled { .. } => ProviderKind::Uncontrolled,
            CoefficientProvider::ContextFree(_) => ProviderKind::ContextFree,
            CoefficientProvider::Amortized(_) => ProviderKind::Amortized,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            CoefficientProvider::Uncontrolled { params, features } => (*params, *features),
            CoefficientProvider::ContextFree(c) => (c.params, c.features),
            CoefficientProvider::Amortized(net) => net.output_shape(),
        }
    }

    /// Coefficients for the given context points (one per batch element).
    pub fn coefficients(&self, contexts: &[&[T]]) -> Result<(CoefficientBlock<T>, ProviderCache<T>)> {
        match self {
            CoefficientProvider::Uncontrolled { params, features } => {
                Ok((CoefficientBlock::zeros(contexts.len(), *params, *features), ProviderCache::Stateless))
            }
            CoefficientProvider::ContextFree(c) => Ok((c.forward(contexts.len()), ProviderCache::Stateless)),
            CoefficientProvider::Amortized(net) => {
                let (block, cache) = net.forward(contexts)?;
                Ok((block, ProviderCache::Network(cache)))
            }
        }
    }

    /// Gradient of a scalar objective with respect to the provider parameters.
    pub fn backward(&self, cache: &ProviderCache<T>, upstream: &CoefficientBlock<T>) -> Result<Vec<T>> {
        match (self, cache) {
            (CoefficientProvider::Uncontrolled { .. }, _) => Ok(Vec::new()),
            (CoefficientProvider::ContextFree(c), _) => c.backward(upstream),
            (CoefficientProvider::Amortized(net), ProviderCache::Network(cache)) => net.backward(cache, upstream),
            (CoefficientProvider::Amortized(_), ProviderCache::Stateless) => {
                Err(Error::StaleCache("network provider needs a network forward cache".into()))
            }
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            CoefficientProvider::Uncontrolled { .. } => 0,
            CoefficientProvider::ContextFree(c) => c.c_global.len(),
            CoefficientProvider::Amortized(net) => net.num_params(),
        }
    }

    pub fn params(&self) -> &[T] {
        match self {
            CoefficientProvider::Uncontrolled { .. } => &[],
            CoefficientProvider::ContextFree(c) => &c.c_global,
            CoefficientProvider::Amortized(net) => net.params(),
        }
    }

    /// Mutable parameter view; for networks this invalidates earlier caches.
    pub fn params_mut(&mut self) -> &mut [T] {
        match self {
            CoefficientProvider::Uncontrolled { .. } => &mut [],
            CoefficientProvider::ContextFree(c) => &mut c.c_global,
            CoefficientProvider::Amortized(net) => net.params_mut(),
        }
    }
}
