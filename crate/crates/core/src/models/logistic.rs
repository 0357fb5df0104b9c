use super::{DoublyStochasticModel, ModelState};
use crate::error::{Error, Result};
use crate::noise::CholeskyFactor;
use crate::scalar::{dot, sigmoid, softplus, Scalar};

/// Number of free parameters of a `dim×dim` lower-triangular factor.
pub fn tri_len(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

/// Row-major position of `(i, j)`, `j ≤ i`, in the packed triangle.
#[inline]
pub fn tri_index(i: usize, j: usize) -> usize {
    debug_assert!(j <= i);
    i * (i + 1) / 2 + j
}

/// `KL(N(m, LLᵀ) ‖ N(0, I)) = ½(‖L‖_F² + ‖m‖² − D) − Σ log L_ii`.
pub fn gaussian_kl<T: Scalar>(m: &[T], chol: &CholeskyFactor<T>) -> Result<T> {
    let d = chol.dim();
    if m.len() != d {
        return Err(Error::Shape(format!("mean length {} vs factor dim {d}", m.len())));
    }
    let frob: T = chol.as_slice().iter().map(|&v| v * v).sum();
    let logdet: T = (0..d).map(|i| chol.get(i, i).ln()).sum();
    Ok(T::of(0.5) * (frob + dot(m, m) - T::of(d as f64)) - logdet)
}

/// Bayesian logistic regression with a full-covariance Gaussian posterior
/// `q(w) = N(m, LLᵀ)` and a unit Gaussian prior, sampled as `w = m + Lε`.
///
/// `θ = [m; vech(L)]` where the packed triangle stores `log L_ii` on the
/// diagonal, so every finite `θ` maps to a valid factor.
/// `f_b = −log p(y_b | x_b, w) + KL(q ‖ p) / N`.
#[derive(Debug, Clone)]
pub struct LogisticRegression<T> {
    features: Vec<Vec<T>>,
    labels: Vec<T>,
    contexts: Vec<Vec<T>>,
    dim: usize,
}

fn check_label<T: Scalar>(y: T) -> Result<()> {
    if y == T::zero() || y == T::one() {
        Ok(())
    } else {
        Err(Error::InvalidLabel(y.as_f64()))
    }
}

impl<T: Scalar> LogisticRegression<T> {
    /// Contexts are the features with the label appended.
    pub fn new(features: Vec<Vec<T>>, labels: Vec<T>) -> Result<Self> {
        if features.is_empty() || features.len() != labels.len() {
            return Err(Error::Shape(format!("{} feature rows vs {} labels", features.len(), labels.len())));
        }
        let dim = features[0].len();
        if dim == 0 || features.iter().any(|x| x.len() != dim) {
            return Err(Error::Shape("feature rows must share a positive length".into()));
        }
        labels.iter().try_for_each(|&y| check_label(y))?;
        let contexts = features
            .iter()
            .zip(&labels)
            .map(|(x, &y)| x.iter().copied().chain(std::iter::once(y)).collect())
            .collect();
        Ok(Self { features, labels, contexts, dim })
    }

    pub fn weight_dim(&self) -> usize {
        self.dim
    }

    pub fn features(&self, n: usize) -> &[T] {
        &self.features[n]
    }

    pub fn label(&self, n: usize) -> T {
        self.labels[n]
    }

    /// `m = 0`, `L = I`.
    pub fn initial_state(&self) -> ModelState<T> {
        ModelState::new(
            vec![T::zero(); self.dim + tri_len(self.dim)],
            vec![("mean", self.dim), ("cholesky", tri_len(self.dim))],
        )
        .expect("segment lengths match")
    }

    pub fn pack(m: &[T], chol: &CholeskyFactor<T>) -> Vec<T> {
        let d = chol.dim();
        let mut theta = m.to_vec();
        for i in 0..d {
            for j in 0..i {
                theta.push(chol.get(i, j));
            }
            theta.push(chol.get(i, i).ln());
        }
        theta
    }

    pub fn unpack(theta: &[T], dim: usize) -> (Vec<T>, CholeskyFactor<T>) {
        let (m, tri) = theta.split_at(dim);
        let mut data = vec![T::zero(); dim * dim];
        for i in 0..dim {
            for j in 0..i {
                data[i * dim + j] = tri[tri_index(i, j)];
            }
            data[i * dim + i] = tri[tri_index(i, i)].exp();
        }
        let chol = CholeskyFactor::new(dim, data).expect("exp keeps the diagonal positive");
        (m.to_vec(), chol)
    }

    fn kl_weight(&self) -> T {
        T::one() / T::of(self.features.len() as f64)
    }
}

fn datum_value<T: Scalar>(x: &[T], y: T, eps: &[T], theta: &[T], kl_weight: T) -> T {
    let d = x.len();
    let (m, tri) = theta.split_at(d);
    let mut z = dot(m, x);
    // KL(N(m, LLᵀ) ‖ N(0, I)) = ½(‖L‖_F² + ‖m‖² − D) − Σ log L_ii, read off the packed triangle.
    let mut frob = dot(m, m);
    let mut log_det = T::zero();
    for i in 0..d {
        let mut li_eps = T::zero();
        for j in 0..i {
            let lij = tri[tri_index(i, j)];
            li_eps += lij * eps[j];
            frob += lij * lij;
        }
        let s = tri[tri_index(i, i)];
        let lii = s.exp();
        li_eps += lii * eps[i];
        frob += lii * lii;
        log_det += s;
        z += x[i] * li_eps;
    }
    let kl = T::of(0.5) * (frob - T::of(d as f64)) - log_det;
    softplus(z) - y * z + kl_weight * kl
}

fn datum_gradient<T: Scalar>(x: &[T], y: T, eps: &[T], theta: &[T], kl_weight: T, out: &mut [T]) {
    let d = x.len();
    let (m, tri) = theta.split_at(d);
    // z = (m + Lε)ᵀx, with L read straight from the packed triangle.
    let mut z = dot(m, x);
    for i in 0..d {
        let mut li_eps = T::zero();
        for j in 0..i {
            li_eps += tri[tri_index(i, j)] * eps[j];
        }
        li_eps += tri[tri_index(i, i)].exp() * eps[i];
        z += x[i] * li_eps;
    }
    let r = sigmoid(z) - y;
    let (g_m, g_tri) = out.split_at_mut(d);
    for i in 0..d {
        g_m[i] = r * x[i] + kl_weight * m[i];
        for j in 0..i {
            let lij = tri[tri_index(i, j)];
            g_tri[tri_index(i, j)] = r * x[i] * eps[j] + kl_weight * lij;
        }
        let lii = tri[tri_index(i, i)].exp();
        g_tri[tri_index(i, i)] = r * x[i] * eps[i] * lii + kl_weight * (lii * lii - T::one());
    }
}

/// Pathwise gradient of one datum's term with respect to `[m; vech(L)]`.
pub fn logreg_per_datum_grad<T: Scalar>(x: &[T], y: T, eps: &[T], theta: &[T], n: usize) -> Result<Vec<T>> {
    check_label(y)?;
    let d = x.len();
    if eps.len() != d || theta.len() != d + tri_len(d) {
        return Err(Error::Shape(format!(
            "x {d}, eps {}, theta {} (expected {})",
            eps.len(),
            theta.len(),
            d + tri_len(d)
        )));
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("theta has non-finite entries".into()));
    }
    let mut out = vec![T::zero(); theta.len()];
    datum_gradient(x, y, eps, theta, T::one() / T::of(n as f64), &mut out);
    Ok(out)
}

impl<T: Scalar> DoublyStochasticModel<T> for LogisticRegression<T> {
    fn num_data(&self) -> usize {
        self.features.len()
    }

    fn param_dim(&self) -> usize {
        self.dim + tri_len(self.dim)
    }

    fn noise_dim(&self) -> usize {
        self.dim
    }

    fn context_dim(&self) -> usize {
        self.dim + 1
    }

    fn context(&self, b: usize) -> &[T] {
        &self.contexts[b]
    }

    fn value(&self, b: usize, eps: &[T], theta: &[T]) -> T {
        datum_value(&self.features[b], self.labels[b], eps, theta, self.kl_weight())
    }

    fn gradient(&self, b: usize, eps: &[T], theta: &[T], out: &mut [T]) {
        datum_gradient(&self.features[b], self.labels[b], eps, theta, self.kl_weight(), out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::nelbo_estimate;
    use crate::gradcheck::central_difference;
    use proptest::prelude::*;

    #[test]
    fn mean_gradient_at_origin() {
        let theta = vec![0.0f64; 2 + 3];
        let g = logreg_per_datum_grad(&[1.0, 0.0], 1.0, &[0.0, 0.0], &theta, usize::MAX).unwrap();
        assert!((g[0] + 0.5).abs() < 1e-15 && g[1].abs() < 1e-15);
    }

    #[test]
    fn invalid_label_rejected() {
        let theta = vec![0.0; 2];
        assert!(matches!(
            logreg_per_datum_grad(&[1.0], 0.5, &[0.0], &theta, 10),
            Err(Error::InvalidLabel(_))
        ));
        assert!(LogisticRegression::new(vec![vec![1.0]], vec![2.0]).is_err());
    }

    #[test]
    fn kl_examples() {
        let id = CholeskyFactor::<f64>::identity(2);
        assert_eq!(gaussian_kl(&[0.0, 0.0], &id).unwrap(), 0.0);
        assert!((gaussian_kl(&[1.0, 0.0], &id).unwrap() - 0.5).abs() < 1e-15);
        let l = CholeskyFactor::diagonal(&[2.0, 1.0]).unwrap();
        let kl = gaussian_kl(&[0.0, 0.0], &l).unwrap();
        assert!((kl - (1.5 - 2f64.ln())).abs() < 1e-14);
        assert!((kl - 0.80685).abs() < 1e-5);
    }

    #[test]
    fn kl_gradient_vanishes_at_prior() {
        // With x = 0 only the KL part contributes; at q = prior it is stationary.
        let theta = vec![0.0f64; 3 + 6];
        let g = logreg_per_datum_grad(&[0.0, 0.0, 0.0], 1.0, &[0.4, -1.0, 2.0], &theta, 1).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn collapsed_posterior_gives_ln2() {
        let model = LogisticRegression::new(vec![vec![1.5, -0.3]], vec![1.0]).unwrap();
        let tiny = CholeskyFactor::diagonal(&[1e-9, 1e-9]).unwrap();
        let theta = LogisticRegression::pack(&[0.0, 0.0], &tiny);
        let nll = nelbo_estimate(&model, &theta, 10, 1).unwrap() - gaussian_kl(&[0.0, 0.0], &tiny).unwrap();
        assert!((nll - 2f64.ln()).abs() < 1e-8);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let model = LogisticRegression::new(
            vec![vec![0.5, -1.2, 0.3], vec![-0.7, 0.1, 2.0]],
            vec![1.0, 0.0],
        )
        .unwrap();
        let theta = [0.2, -0.4, 0.9, -0.3, 0.25, 0.1, -0.6, 0.05, -0.2];
        let eps = [0.3, -1.1, 0.8];
        for b in 0..2 {
            let mut g = [0.0; 9];
            model.gradient(b, &eps, &theta, &mut g);
            let fd = central_difference(|t| model.value(b, &eps, t), &theta, 1e-6);
            for i in 0..9 {
                let err = (g[i] - fd[i]).abs() / (g[i].abs().max(fd[i].abs()).max(1e-3));
                assert!(err < 1e-6, "datum {b} param {i}: {} vs {}", g[i], fd[i]);
            }
        }
    }

    proptest! {
        #[test]
        fn pack_unpack_round_trip(theta in proptest::collection::vec(-3.0f64..3.0, 2 + 3)) {
            let (m, l) = LogisticRegression::unpack(&theta, 2);
            prop_assert!((0..2).all(|i| l.get(i, i) > 0.0));
            let back = LogisticRegression::pack(&m, &l);
            for (a, b) in theta.iter().zip(&back) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn kl_is_non_negative(theta in proptest::collection::vec(-2.0f64..2.0, 3 + 6)) {
            let (m, l) = LogisticRegression::unpack(&theta, 3);
            prop_assert!(gaussian_kl(&m, &l).unwrap() >= -1e-12);
        }
    }
}
