//! Base randomness and centered polynomial control variate features.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;

/// Standard normal draws laid out as `[batch][samples][dim]`.
///
/// Element `b` of the batch is drawn from its own substream of `seed`, so a
/// datum's noise does not depend on the batch size.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw<T> {
    epsilon: Vec<T>,
    pub seed: u64,
    pub batch_indices: Vec<usize>,
    batch: usize,
    samples: usize,
    dim: usize,
}

impl<T: Scalar> NoiseDraw<T> {
    /// Wraps explicit values; `epsilon.len()` must equal `batch * samples * dim`.
    pub fn from_values(epsilon: Vec<T>, batch: usize, samples: usize, dim: usize) -> Result<Self> {
        if batch == 0 || samples == 0 || dim == 0 {
            return Err(Error::InvalidArgument("noise dimensions must be positive".into()));
        }
        if epsilon.len() != batch * samples * dim {
            return Err(Error::Shape(format!(
                "noise has {} values, expected {batch}x{samples}x{dim}",
                epsilon.len()
            )));
        }
        Ok(Self {
            epsilon,
            seed: 0,
            batch_indices: (0..batch).collect(),
            batch,
            samples,
            dim,
        })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[T] {
        &self.epsilon
    }

    /// The draw `ε_b^(s)`.
    pub fn eps(&self, b: usize, s: usize) -> &[T] {
        let start = (b * self.samples + s) * self.dim;
        &self.epsilon[start..start + self.dim]
    }
}

pub fn sample_noise<T: Scalar>(seed: u64, batch_size: usize, samples: usize, dim: usize) -> Result<NoiseDraw<T>> {
    if batch_size == 0 || samples == 0 || dim == 0 {
        return Err(Error::InvalidArgument(format!(
            "noise shape ({batch_size}, {samples}, {dim}) has a zero dimension"
        )));
    }
    let mut epsilon = Vec::with_capacity(batch_size * samples * dim);
    for b in 0..batch_size {
        let mut r = rng::stream(seed, &[b as u64]);
        epsilon.extend((0..samples * dim).map(|_| T::of(r.sample::<f64, _>(StandardNormal))));
    }
    Ok(NoiseDraw {
        epsilon,
        seed,
        batch_indices: (0..batch_size).collect(),
        batch: batch_size,
        samples,
        dim,
    })
}

/// Draws noise for the given dataset indices with a seed taken from `rng`.
pub fn sample_noise_for<T: Scalar, R: Rng + ?Sized>(
    rng: &mut R,
    batch_indices: &[usize],
    samples: usize,
    dim: usize,
) -> Result<NoiseDraw<T>> {
    let seed: u64 = rng.random();
    let mut draw = sample_noise(seed, batch_indices.len(), samples, dim)?;
    draw.batch_indices = batch_indices.to_vec();
    Ok(draw)
}

/// Polynomial order of the control variate basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BasisOrder(usize);

impl BasisOrder {
    pub const LINEAR: BasisOrder = BasisOrder(1);
    pub const QUADRATIC: BasisOrder = BasisOrder(2);
    pub const CUBIC: BasisOrder = BasisOrder(3);

    pub fn new(k: usize) -> Result<Self> {
        if (1..=3).contains(&k) {
            Ok(Self(k))
        } else {
            Err(Error::UnsupportedOrder(k))
        }
    }

    pub fn get(self) -> usize {
        self.0
    }

    /// Number of features for noise of dimension `dim`.
    pub fn features(self, dim: usize) -> usize {
        self.0 * dim
    }
}

/// Centered features `[ε, ε² - 1, ε³][..K]`, laid out `[batch][samples][K·D]`
/// with the power as the slow index.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisEval<T> {
    w: Vec<T>,
    pub order: BasisOrder,
    batch: usize,
    samples: usize,
    features: usize,
}

#[inline]
fn centered_power<T: Scalar>(e: T, k: usize) -> T {
    match k {
        1 => e,
        2 => e * e - T::one(),
        3 => e * e * e,
        _ => unreachable!("order validated by BasisOrder"),
    }
}

impl<T: Scalar> BasisEval<T> {
    pub fn from_values(w: Vec<T>, order: BasisOrder, batch: usize, samples: usize, features: usize) -> Result<Self> {
        if w.len() != batch * samples * features {
            return Err(Error::Shape(format!(
                "basis has {} values, expected {batch}x{samples}x{features}",
                w.len()
            )));
        }
        Ok(Self { w, order, batch, samples, features })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn values(&self) -> &[T] {
        &self.w
    }

    pub fn w(&self, b: usize, s: usize) -> &[T] {
        let start = (b * self.samples + s) * self.features;
        &self.w[start..start + self.features]
    }

    /// Averages features over the sample axis. With coefficients shared across
    /// samples, `(1/S) Σ_s cᵀw_s = cᵀ w̄`, so the result stands in for the
    /// per-sample basis wherever gradients are averaged the same way.
    pub fn sample_mean(&self) -> BasisEval<T> {
        if self.samples == 1 {
            return self.clone();
        }
        let inv = T::one() / T::of(self.samples as f64);
        let mut w = vec![T::zero(); self.batch * self.features];
        for b in 0..self.batch {
            let out = &mut w[b * self.features..(b + 1) * self.features];
            for s in 0..self.samples {
                for (o, &v) in out.iter_mut().zip(self.w(b, s)) {
                    *o += v;
                }
            }
            out.iter_mut().for_each(|o| *o *= inv);
        }
        BasisEval { w, order: self.order, batch: self.batch, samples: 1, features: self.features }
    }
}

/// Features of a single noise vector, appended to `out`.
pub fn basis_features<T: Scalar>(eps: &[T], order: BasisOrder, out: &mut Vec<T>) {
    for k in 1..=order.get() {
        out.extend(eps.iter().map(|&e| centered_power(e, k)));
    }
}

pub fn eval_basis<T: Scalar>(noise: &NoiseDraw<T>, order: usize) -> Result<BasisEval<T>> {
    let order = BasisOrder::new(order)?;
    let features = order.features(noise.dim);
    let mut w = Vec::with_capacity(noise.batch * noise.samples * features);
    for b in 0..noise.batch {
        for s in 0..noise.samples {
            basis_features(noise.eps(b, s), order, &mut w);
        }
    }
    Ok(BasisEval { w, order, batch: noise.batch, samples: noise.samples, features })
}

/// Lower-triangular factor with strictly positive diagonal, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor<T> {
    dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> CholeskyFactor<T> {
    pub fn new(dim: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::InvalidCholesky(format!("{} entries for a {dim}x{dim} factor", data.len())));
        }
        for i in 0..dim {
            let d = data[i * dim + i];
            if !(d > T::zero()) {
                return Err(Error::InvalidCholesky(format!("diagonal entry {i} is {d}")));
            }
            if let Some(j) = (i + 1..dim).find(|&j| data[i * dim + j] != T::zero()) {
                return Err(Error::InvalidCholesky(format!("entry ({i}, {j}) above the diagonal is non-zero")));
            }
        }
        Ok(Self { dim, data })
    }

    pub fn identity(dim: usize) -> Self {
        let mut data = vec![T::zero(); dim * dim];
        (0..dim).for_each(|i| data[i * dim + i] = T::one());
        Self { dim, data }
    }

    pub fn diagonal(diag: &[T]) -> Result<Self> {
        let dim = diag.len();
        let mut data = vec![T::zero(); dim * dim];
        diag.iter().enumerate().for_each(|(i, &d)| data[i * dim + i] = d);
        Self::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.dim + j]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    /// `out = L·v`.
    pub fn mul_vec(&self, v: &[T], out: &mut [T]) {
        for i in 0..self.dim {
            out[i] = (0..=i).map(|j| self.get(i, j) * v[j]).sum();
        }
    }
}

/// `μ + L·ε` for every draw, laid out like the noise.
pub fn reparameterize<T: Scalar>(mu: &[T], chol: &CholeskyFactor<T>, noise: &NoiseDraw<T>) -> Result<Vec<T>> {
    let d = chol.dim();
    if mu.len() != d || noise.dim != d {
        return Err(Error::Shape(format!(
            "mean has length {}, factor is {d}x{d}, noise dim is {}",
            mu.len(),
            noise.dim
        )));
    }
    let mut out = vec![T::zero(); noise.epsilon.len()];
    for (eps, o) in noise.epsilon.chunks(d).zip(out.chunks_mut(d)) {
        chol.mul_vec(eps, o);
        o.iter_mut().zip(mu).for_each(|(x, &m)| *x += m);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::GaussHermite;
    use crate::stats;

    #[test]
    fn sampling_is_deterministic_and_seed_sensitive() {
        let a: NoiseDraw<f64> = sample_noise(7, 2, 1, 3).unwrap();
        let b: NoiseDraw<f64> = sample_noise(7, 2, 1, 3).unwrap();
        let c: NoiseDraw<f64> = sample_noise(8, 2, 1, 3).unwrap();
        assert_eq!(a.values(), b.values());
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(matches!(sample_noise::<f64>(1, 0, 1, 1), Err(Error::InvalidArgument(_))));
        assert!(matches!(sample_noise::<f64>(1, 1, 0, 1), Err(Error::InvalidArgument(_))));
        assert!(matches!(sample_noise::<f64>(1, 1, 1, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn per_dimension_moments_within_four_sigma() {
        // SE(mean) = 1/sqrt(1000) ≈ 0.0316, SE(var) ≈ sqrt(2/999) ≈ 0.0447.
        let n: NoiseDraw<f64> = sample_noise(7, 1000, 1, 4).unwrap();
        for d in 0..4 {
            let xs: Vec<f64> = (0..1000).map(|b| n.eps(b, 0)[d]).collect();
            let m = stats::mean(&xs);
            let v = stats::variance(&xs);
            assert!(m.abs() < 0.13, "dim {d} mean {m}");
            assert!(v > 0.85 && v < 1.15, "dim {d} var {v}");
        }
    }

    #[test]
    fn basis_examples() {
        let zero = NoiseDraw::from_values(vec![0.0_f64], 1, 1, 1).unwrap();
        assert_eq!(eval_basis(&zero, 2).unwrap().values(), &[0.0, -1.0]);
        let two = NoiseDraw::from_values(vec![2.0_f64], 1, 1, 1).unwrap();
        assert_eq!(eval_basis(&two, 3).unwrap().values(), &[2.0, 3.0, 8.0]);
        let lin = NoiseDraw::from_values(vec![0.3_f64, -1.2], 1, 1, 2).unwrap();
        assert_eq!(eval_basis(&lin, 1).unwrap().values(), lin.values());
        assert!(matches!(eval_basis(&two, 0), Err(Error::UnsupportedOrder(0))));
        assert!(matches!(eval_basis(&two, 4), Err(Error::UnsupportedOrder(4))));
    }

    #[test]
    fn basis_layout_is_power_major() {
        let n = NoiseDraw::from_values(vec![1.0_f32, 2.0], 1, 1, 2).unwrap();
        assert_eq!(eval_basis(&n, 2).unwrap().w(0, 0), &[1.0, 2.0, 0.0, 3.0]);
    }

    #[test]
    fn features_have_zero_mean_by_quadrature() {
        let gh = GaussHermite::new(10);
        for k in 1..=3 {
            let m = gh.expect(|e| centered_power(e, k));
            assert!(m.abs() < 1e-10, "order {k}: {m}");
        }
    }

    #[test]
    fn stein_identity_for_cubic_polynomials() {
        let gh = GaussHermite::new(10);
        let polys: [(fn(f64) -> f64, fn(f64) -> f64); 3] = [
            (|e| 1.0 + 2.0 * e - e * e * e, |e| 2.0 - 3.0 * e * e),
            (|e| 3.0 * e * e - 0.5 * e, |e| 6.0 * e - 0.5),
            (|e| e * e * e + e * e, |e| 3.0 * e * e + 2.0 * e),
        ];
        for (g, dg) in polys {
            let lhs = gh.expect(|e| e * g(e));
            let rhs = gh.expect(dg);
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn features_have_zero_mean_by_monte_carlo() {
        let n: NoiseDraw<f64> = sample_noise(11, 1_000_000, 1, 1).unwrap();
        let w = eval_basis(&n, 3).unwrap();
        let sd = [1.0_f64, 2.0_f64.sqrt(), 15.0_f64.sqrt()];
        for k in 0..3 {
            let m = stats::mean(&(0..1_000_000).map(|b| w.w(b, 0)[k]).collect::<Vec<_>>());
            assert!(m.abs() < 4.0 * sd[k] / 1000.0, "feature {k}: mean {m}");
        }
    }

    #[test]
    fn sample_mean_collapses_sample_axis() {
        let n = NoiseDraw::from_values(vec![1.0_f64, 3.0, -2.0, 0.0], 2, 2, 1).unwrap();
        let w = eval_basis(&n, 2).unwrap().sample_mean();
        assert_eq!(w.samples(), 1);
        assert_eq!(w.w(0, 0), &[2.0, 4.0]);
        assert_eq!(w.w(1, 0), &[-1.0, 1.0]);
    }

    #[test]
    fn reparameterize_examples() {
        let n = NoiseDraw::from_values(vec![1.0_f64, -1.0], 1, 1, 2).unwrap();
        let id = CholeskyFactor::identity(2);
        assert_eq!(reparameterize(&[0.0, 0.0], &id, &n).unwrap(), n.values());
        let l = CholeskyFactor::diagonal(&[2.0, 3.0]).unwrap();
        assert_eq!(reparameterize(&[1.0, 1.0], &l, &n).unwrap(), vec![3.0, -2.0]);
        assert!(matches!(CholeskyFactor::diagonal(&[1.0, 0.0]), Err(Error::InvalidCholesky(_))));
        assert!(matches!(CholeskyFactor::new(2, vec![1.0, 0.5, 0.0, 1.0]), Err(Error::InvalidCholesky(_))));
    }

    #[test]
    fn reparameterized_covariance_matches_llt() {
        let l = CholeskyFactor::new(2, vec![1.5, 0.0, -0.7, 0.4]).unwrap();
        let n: NoiseDraw<f64> = sample_noise(3, 1_000_000, 1, 2).unwrap();
        let x = reparameterize(&[0.5, -1.0], &l, &n).unwrap();
        let a: Vec<f64> = x.chunks(2).map(|c| c[0]).collect();
        let b: Vec<f64> = x.chunks(2).map(|c| c[1]).collect();
        let emp = [stats::variance(&a), stats::covariance(&a, &b), stats::variance(&b)];
        let exact = [2.25, -1.05, 0.49 + 0.16];
        let err = ((emp[0] - exact[0]).powi(2) + 2.0 * (emp[1] - exact[1]).powi(2) + (emp[2] - exact[2]).powi(2)).sqrt();
        let nrm = (exact[0].powi(2) + 2.0 * exact[1].powi(2) + exact[2].powi(2)).sqrt();
        assert!(err / nrm < 0.02, "relative Frobenius error {}", err / nrm);
    }
}
