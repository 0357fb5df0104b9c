use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::CoefficientBlock;
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;

static NEXT_NET_ID: AtomicU64 = AtomicU64::new(1);

/// Fully connected ReLU network `r_φ: context → R^{P×F}`.
///
/// All weights and biases live in one flat vector `φ`; layer `l` stores its
/// `out×in` weight matrix row-major followed by its bias. Hidden layers use
/// ReLU, the output layer is linear.
#[derive(Debug)]
pub struct RecognitionNet<T> {
    sizes: Vec<usize>,
    params: Vec<T>,
    output: (usize, usize),
    id: u64,
    version: u64,
}

impl<T: Clone> Clone for RecognitionNet<T> {
    fn clone(&self) -> Self {
        Self {
            sizes: self.sizes.clone(),
            params: self.params.clone(),
            output: self.output,
            id: NEXT_NET_ID.fetch_add(1, Ordering::Relaxed),
            version: 0,
        }
    }
}

/// Layer inputs and hidden pre-activations from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    /// `inputs[l]` is the `[batch][sizes[l]]` input of layer `l`.
    inputs: Vec<Vec<T>>,
    batch: usize,
    net_id: u64,
    version: u64,
}

impl<T: Scalar> RecognitionNet<T> {
    /// All-zero network; `sizes = [in, hidden.., P·F]`.
    pub fn zeros(sizes: &[usize], params: usize, features: usize) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!("layer sizes {sizes:?} need an input and output, all positive")));
        }
        if *sizes.last().unwrap() != params * features {
            return Err(Error::Shape(format!(
                "output layer has {} units, coefficient block needs {params}x{features}",
                sizes.last().unwrap()
            )));
        }
        let n = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Self {
            sizes: sizes.to_vec(),
            params: vec![T::zero(); n],
            output: (params, features),
            id: NEXT_NET_ID.fetch_add(1, Ordering::Relaxed),
            version: 0,
        })
    }

    pub fn from_params(sizes: &[usize], params: usize, features: usize, phi: Vec<T>) -> Result<Self> {
        let mut net = Self::zeros(sizes, params, features)?;
        if phi.len() != net.params.len() {
            return Err(Error::Shape(format!("{} parameters for a network with {}", phi.len(), net.params.len())));
        }
        net.params = phi;
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn output_shape(&self) -> (usize, usize) {
        self.output
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        self.version += 1;
        &mut self.params
    }

    /// Offset of layer `l`'s weights within `φ`; its bias follows the weights.
    pub fn layer_offset(&self, l: usize) -> usize {
        self.sizes.windows(2).take(l).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn weights(&self, l: usize) -> &[T] {
        let o = self.layer_offset(l);
        &self.params[o..o + self.sizes[l] * self.sizes[l + 1]]
    }

    pub fn bias(&self, l: usize) -> &[T] {
        let o = self.layer_offset(l) + self.sizes[l] * self.sizes[l + 1];
        &self.params[o..o + self.sizes[l + 1]]
    }

    /// Coefficients for each context, plus the activations needed by [`Self::backward`].
    pub fn forward(&self, contexts: &[&[T]]) -> Result<(CoefficientBlock<T>, ForwardCache<T>)> {
        let in_dim = self.sizes[0];
        if let Some(bad) = contexts.iter().find(|c| c.len() != in_dim) {
            return Err(Error::Shape(format!("context has {} entries, network expects {in_dim}", bad.len())));
        }
        let batch = contexts.len();
        let mut inputs = Vec::with_capacity(self.num_layers());
        let mut current: Vec<T> = contexts.iter().flat_map(|c| c.iter().copied()).collect();
        for l in 0..self.num_layers() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let (w, bias) = (self.weights(l), self.bias(l));
            let hidden = l + 1 < self.num_layers();
            let mut next = vec![T::zero(); batch * fan_out];
            for b in 0..batch {
                let x = &current[b * fan_in..(b + 1) * fan_in];
                for (o, out) in next[b * fan_out..(b + 1) * fan_out].iter_mut().enumerate() {
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    let z = row.iter().zip(x).fold(bias[o], |acc, (&wi, &xi)| acc + wi * xi);
                    *out = if hidden && z <= T::zero() { T::zero() } else { z };
                }
            }
            inputs.push(std::mem::replace(&mut current, next));
        }
        let (p, f) = self.output;
        let block = CoefficientBlock::from_values(current, batch, p, f)?;
        Ok((block, ForwardCache { inputs, batch, net_id: self.id, version: self.version }))
    }

    /// Reverse-mode gradient of `Σ upstream ⊙ coefficients` with respect to `φ`.
    /// The ReLU derivative at exactly zero is taken as zero.
    pub fn backward(&self, cache: &ForwardCache<T>, upstream: &CoefficientBlock<T>) -> Result<Vec<T>> {
        if cache.net_id != self.id || cache.version != self.version {
            return Err(Error::StaleCache(format!(
                "cache from network {} v{}, current network {} v{}",
                cache.net_id, cache.version, self.id, self.version
            )));
        }
        let (p, f) = self.output;
        if upstream.batch() != cache.batch || upstream.params() != p || upstream.features() != f {
            return Err(Error::Shape("upstream gradient does not match the forward output".into()));
        }
        let batch = cache.batch;
        let mut grad = vec![T::zero(); self.params.len()];
        let mut delta: Vec<T> = upstream.values().to_vec();
        for l in (0..self.num_layers()).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let offset = self.layer_offset(l);
            let x = &cache.inputs[l];
            {
                let (gw, gb) = grad[offset..offset + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
                for b in 0..batch {
                    let xb = &x[b * fan_in..(b + 1) * fan_in];
                    for o in 0..fan_out {
                        let d = delta[b * fan_out + o];
                        if d == T::zero() {
                            continue;
                        }
                        gb[o] += d;
                        gw[o * fan_in..(o + 1) * fan_in].iter_mut().zip(xb).for_each(|(g, &xi)| *g += d * xi);
                    }
                }
            }
            if l == 0 {
                break;
            }
            // Input of layer l is relu(z_{l-1}); positive entries mark active units.
            let w = self.weights(l);
            let mut prev = vec![T::zero(); batch * fan_in];
            for b in 0..batch {
                for o in 0..fan_out {
                    let d = delta[b * fan_out + o];
                    if d == T::zero() {
                        continue;
                    }
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    prev[b * fan_in..(b + 1) * fan_in].iter_mut().zip(row).for_each(|(pv, &wi)| *pv += d * wi);
                }
                for (pv, &a) in prev[b * fan_in..(b + 1) * fan_in].iter_mut().zip(&x[b * fan_in..(b + 1) * fan_in]) {
                    if a <= T::zero() {
                        *pv = T::zero();
                    }
                }
            }
            delta = prev;
        }
        Ok(grad)
    }
}

/// Glorot-uniform weights on `±√(6/(fan_in + fan_out))`, zero biases.
pub fn xavier_init<T: Scalar>(sizes: &[usize], params: usize, features: usize, seed: u64) -> Result<RecognitionNet<T>> {
    let mut net = RecognitionNet::zeros(sizes, params, features)?;
    let mut r = rng::stream(seed, &[0x7A]);
    for l in 0..net.num_layers() {
        let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let o = net.layer_offset(l);
        for w in &mut net.params[o..o + fan_in * fan_out] {
            *w = T::of(r.random_range(-bound..bound));
        }
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_difference, max_relative_error};
    use crate::stats;
    use rand::Rng;

    /// Independent scalar evaluation of one output coordinate.
    fn scalar_output(net: &RecognitionNet<f64>, ctx: &[f64], coord: usize) -> f64 {
        let sizes = net.sizes();
        let mut a = ctx.to_vec();
        for l in 0..net.num_layers() {
            let w = net.weights(l);
            let bias = net.bias(l);
            let mut z = Vec::new();
            for o in 0..sizes[l + 1] {
                let mut s = bias[o];
                for i in 0..sizes[l] {
                    s += w[o * sizes[l] + i] * a[i];
                }
                z.push(if l + 1 < net.num_layers() { s.max(0.0) } else { s });
            }
            a = z;
        }
        a[coord]
    }

    #[test]
    fn xavier_is_reproducible_with_zero_bias() {
        let a: RecognitionNet<f64> = xavier_init(&[4, 8, 6], 3, 2, 9).unwrap();
        let b: RecognitionNet<f64> = xavier_init(&[4, 8, 6], 3, 2, 9).unwrap();
        assert_eq!(a.params(), b.params());
        assert!(a.bias(0).iter().chain(a.bias(1)).all(|&v| v == 0.0));
        let bound = (6.0f64 / 12.0).sqrt();
        assert!(a.weights(0).iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn xavier_variance_matches_uniform() {
        let net: RecognitionNet<f64> = xavier_init(&[100, 100], 100, 1, 4).unwrap();
        let v = stats::variance(net.weights(0));
        let expected = 2.0 / 200.0;
        assert!((v / expected - 1.0).abs() < 0.2, "variance {v}");
    }

    #[test]
    fn accepts_three_wide_hidden_layers() {
        let net: RecognitionNet<f64> = xavier_init(&[9, 128, 128, 128, 44 * 8], 44, 8, 1).unwrap();
        assert_eq!(net.num_layers(), 4);
    }

    #[test]
    fn rejects_mismatched_output() {
        assert!(matches!(RecognitionNet::<f64>::zeros(&[3, 5], 2, 2), Err(Error::Shape(_))));
        let net = RecognitionNet::<f64>::zeros(&[3, 4], 2, 2).unwrap();
        assert!(matches!(net.forward(&[&[1.0, 2.0]]), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_network_gives_zero_block() {
        let net = RecognitionNet::<f64>::zeros(&[3, 5, 4], 2, 2).unwrap();
        let (block, _) = net.forward(&[&[1.0, -2.0, 0.5]]).unwrap();
        assert!(block.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_linear_layer_is_matrix_product() {
        let w = vec![1.0, 2.0, 0.0, -1.0, 0.5, 3.0, 0.0, 0.0];
        let bias = vec![0.0; 4];
        let phi: Vec<f64> = w.iter().chain(&bias).copied().collect();
        let net = RecognitionNet::from_params(&[2, 4], 4, 1, phi).unwrap();
        let (block, _) = net.forward(&[&[2.0, 1.0]]).unwrap();
        assert_eq!(block.values(), &[4.0, -1.0, 4.0, 0.0]);
    }

    #[test]
    fn forward_matches_scalar_reimplementation() {
        let net: RecognitionNet<f64> = xavier_init(&[5, 7, 6, 6], 3, 2, 21).unwrap();
        let mut r = rng::stream(5, &[]);
        let ctxs: Vec<Vec<f64>> = (0..4).map(|_| (0..5).map(|_| r.random_range(-2.0..2.0)).collect()).collect();
        let refs: Vec<&[f64]> = ctxs.iter().map(|c| c.as_slice()).collect();
        let (block, _) = net.forward(&refs).unwrap();
        for (b, ctx) in ctxs.iter().enumerate() {
            for coord in 0..6 {
                let v = block.datum(b)[coord];
                assert!((v - scalar_output(&net, ctx, coord)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let net: RecognitionNet<f64> = xavier_init(&[3, 4, 2], 2, 1, 2).unwrap();
        let (block, cache) = net.forward(&[&[1.0, 2.0, 3.0]]).unwrap();
        let up = CoefficientBlock::zeros(1, block.params(), block.features());
        assert!(net.backward(&cache, &up).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn linear_adjoint_sums_contexts() {
        let net = RecognitionNet::<f64>::zeros(&[2, 3], 3, 1).unwrap();
        let (_, cache) = net.forward(&[&[1.0, 2.0], &[3.0, -1.0]]).unwrap();
        let up = CoefficientBlock::from_values(vec![1.0; 6], 2, 3, 1).unwrap();
        let g = net.backward(&cache, &up).unwrap();
        for o in 0..3 {
            assert_eq!(&g[o * 2..o * 2 + 2], &[4.0, 1.0]);
        }
        assert_eq!(&g[6..9], &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut net: RecognitionNet<f64> = xavier_init(&[2, 3, 2], 2, 1, 3).unwrap();
        let (block, cache) = net.forward(&[&[1.0, 1.0]]).unwrap();
        net.params_mut()[0] += 1.0;
        assert!(matches!(net.backward(&cache, &block), Err(Error::StaleCache(_))));
        let other = net.clone();
        let (_, cache) = net.forward(&[&[1.0, 1.0]]).unwrap();
        assert!(matches!(other.backward(&cache, &block), Err(Error::StaleCache(_))));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let net: RecognitionNet<f64> = xavier_init(&[4, 12, 8, 6], 3, 2, 8).unwrap();
        assert!(net.num_params() >= 200);
        let ctxs = [[0.5, -1.0, 2.0, 0.1], [-0.3, 0.8, -1.5, 1.2], [1.1, 0.2, 0.3, -0.4]];
        let refs: Vec<&[f64]> = ctxs.iter().map(|c| c.as_slice()).collect();
        let mut r = rng::stream(12, &[]);
        let up: Vec<f64> = (0..3 * 6).map(|_| r.random_range(-1.0..1.0)).collect();
        let upstream = CoefficientBlock::from_values(up.clone(), 3, 3, 2).unwrap();
        let (_, cache) = net.forward(&refs).unwrap();
        let g = net.backward(&cache, &upstream).unwrap();
        let objective = |phi: &[f64]| {
            let n = RecognitionNet::from_params(&[4, 12, 8, 6], 3, 2, phi.to_vec()).unwrap();
            let (b, _) = n.forward(&refs).unwrap();
            b.values().iter().zip(&up).map(|(c, u)| c * u).sum::<f64>()
        };
        let fd = central_difference(objective, net.params(), 1e-6);
        assert!(max_relative_error(&g, &fd, 1e-4) < 1e-5);
    }
}
