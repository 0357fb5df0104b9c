//! Datasets, synthetic logistic data and mini-batch sampling.

use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::models::LogisticRegression;
use crate::rng;
use crate::scalar::{sigmoid, Scalar};

/// Feature columns with standard deviation below this are treated as constant.
const STD_FLOOR: f64 = 1e-12;

/// Standardized features plus targets. `means`/`stds` undo the transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub target_name: String,
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Dataset {
    /// Z-scores every column (population standard deviation). Constant
    /// columns become all zeros.
    pub fn standardize(
        feature_names: Vec<String>,
        target_name: String,
        raw: Vec<Vec<f64>>,
        targets: Vec<f64>,
    ) -> Result<Self> {
        if raw.is_empty() || raw.len() != targets.len() {
            return Err(Error::Shape(format!("{} rows vs {} targets", raw.len(), targets.len())));
        }
        let d = raw[0].len();
        if raw.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("ragged feature rows".into()));
        }
        let n = raw.len() as f64;
        let means: Vec<f64> = (0..d).map(|j| raw.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let stds: Vec<f64> = (0..d)
            .map(|j| {
                let var = raw.iter().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / n;
                let s = var.sqrt();
                if s < STD_FLOOR {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        let features = raw
            .iter()
            .map(|r| r.iter().enumerate().map(|(j, &v)| (v - means[j]) / stds[j]).collect())
            .collect();
        Ok(Self { feature_names, target_name, features, targets, means, stds })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn destandardize(&self) -> Vec<Vec<f64>> {
        self.features
            .iter()
            .map(|r| r.iter().enumerate().map(|(j, &v)| v * self.stds[j] + self.means[j]).collect())
            .collect()
    }

    pub fn to_logistic<T: Scalar>(&self) -> Result<LogisticRegression<T>> {
        let x = self.features.iter().map(|r| r.iter().map(|&v| T::of(v)).collect()).collect();
        let y = self.targets.iter().map(|&v| T::of(v)).collect();
        LogisticRegression::new(x, y)
    }

    /// Writes the standardized features and targets with a header row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = self.feature_names.clone();
        header.push(self.target_name.clone());
        w.write_record(&header)?;
        for (x, y) in self.features.iter().zip(&self.targets) {
            w.write_record(x.iter().chain(std::iter::once(y)).map(|v| format!("{v:e}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads a headed numeric CSV. The target is the last column unless `target`
/// names another one. Rows with missing or non-numeric cells are rejected.
pub fn load_csv(path: &Path, target: Option<&str>) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.len() < 2 {
        return Err(Error::Parse { location: "header".into(), message: "need at least one feature and a target".into() });
    }
    let target_col = match target {
        Some(name) => header.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            location: "header".into(),
            message: format!("target column '{name}' not found"),
        })?,
        None => header.len() - 1,
    };
    let mut raw = Vec::new();
    let mut targets = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row_no = i + 2;
        let record = record.map_err(|e| Error::Parse { location: format!("row {row_no}"), message: e.to_string() })?;
        let mut x = Vec::with_capacity(header.len() - 1);
        for (j, cell) in record.iter().enumerate() {
            if cell.is_empty() {
                return Err(Error::Parse {
                    location: format!("row {row_no}, column {} ({})", j + 1, header[j]),
                    message: "missing value".into(),
                });
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                location: format!("row {row_no}, column {} ({})", j + 1, header[j]),
                message: format!("'{cell}' is not numeric"),
            })?;
            if j == target_col {
                targets.push(v);
            } else {
                x.push(v);
            }
        }
        raw.push(x);
    }
    if raw.is_empty() {
        return Err(Error::Parse { location: path.display().to_string(), message: "no data rows".into() });
    }
    let names = header.iter().enumerate().filter(|(j, _)| *j != target_col).map(|(_, h)| h.clone()).collect();
    Dataset::standardize(names, header[target_col].clone(), raw, targets)
}

/// Knobs for [`synth_logreg_with`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n: usize,
    pub dim: usize,
    pub clusters: usize,
    /// Spread of cluster centres around the origin.
    pub center_scale: f64,
    /// Within-cluster standard deviation.
    pub cluster_std: f64,
    /// Scale of the generating weights; zero gives coin-flip labels.
    pub weight_scale: f64,
    /// Within-cluster correlation shared by all features through one latent factor.
    pub correlation: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { seed: 0, n: 500, dim: 8, clusters: 4, center_scale: 2.0, cluster_std: 0.7, weight_scale: 1.0, correlation: 0.0 }
    }
}

/// Gaussian clusters with labels from a logistic model on the raw features.
/// Returns the (standardized) dataset and the generating weights.
pub fn synth_logreg(seed: u64, n: usize, dim: usize, clusters: usize) -> Result<(Dataset, Vec<f64>)> {
    synth_logreg_with(&SynthConfig { seed, n, dim, clusters, ..SynthConfig::default() })
}

pub fn synth_logreg_with(cfg: &SynthConfig) -> Result<(Dataset, Vec<f64>)> {
    if !(-1.0..=1.0).contains(&cfg.correlation) {
        return Err(Error::InvalidArgument(format!("correlation {} must lie in [-1, 1]", cfg.correlation)));
    }
    if cfg.clusters == 0 || cfg.n < cfg.clusters || cfg.dim == 0 {
        return Err(Error::InvalidArgument(format!(
            "need n >= clusters >= 1 and dim >= 1 (n={}, clusters={}, dim={})",
            cfg.n, cfg.clusters, cfg.dim
        )));
    }
    let mut r = rng::stream(cfg.seed, &[0x5E]);
    let mut normal = move || -> f64 { r.sample(StandardNormal) };
    let weights: Vec<f64> = (0..cfg.dim).map(|_| normal() * cfg.weight_scale).collect();
    let centers: Vec<Vec<f64>> =
        (0..cfg.clusters).map(|_| (0..cfg.dim).map(|_| normal() * cfg.center_scale).collect()).collect();
    let mut label_rng = rng::stream(cfg.seed, &[0x1A]);
    let mut raw = Vec::with_capacity(cfg.n);
    let mut y = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let c = &centers[i % cfg.clusters];
        let shared = normal();
        let rho = cfg.correlation;
        let x: Vec<f64> =
            c.iter().map(|&m| m + cfg.cluster_std * (rho * shared + (1.0 - rho * rho).sqrt() * normal())).collect();
        let z: f64 = x.iter().zip(&weights).map(|(a, b)| a * b).sum();
        y.push(if label_rng.random::<f64>() < sigmoid(z) { 1.0 } else { 0.0 });
        raw.push(x);
    }
    let names = (0..cfg.dim).map(|j| format!("x{j}")).collect();
    Ok((Dataset::standardize(names, "y".into(), raw, y)?, weights))
}

/// `size` distinct indices from `0..n`, uniform without replacement.
pub fn sample_minibatch<R: Rng + ?Sized>(rng: &mut R, n: usize, size: usize) -> Result<Vec<usize>> {
    if size == 0 || size > n {
        return Err(Error::InvalidArgument(format!("mini-batch size {size} must lie in 1..={n}")));
    }
    Ok(index::sample(rng, n, size).into_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn standardizes_three_rows() {
        let f = write_tmp("a,b,y\n0,5,1\n1,5,0\n2,5,1\n");
        let ds = load_csv(f.path(), None).unwrap();
        let col: Vec<f64> = ds.features.iter().map(|r| r[0]).collect();
        let z = 1.5f64.sqrt();
        for (got, want) in col.iter().zip([-z, 0.0, z]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(ds.features.iter().all(|r| r[1] == 0.0));
        assert_eq!(ds.targets, vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn named_target_column() {
        let f = write_tmp("y,a\n1,0\n0,2\n");
        let ds = load_csv(f.path(), Some("y")).unwrap();
        assert_eq!(ds.feature_names, vec!["a"]);
        assert_eq!(ds.targets, vec![1.0, 0.0]);
    }

    #[test]
    fn parse_errors_carry_location() {
        let f = write_tmp("a,y\n1,0\nfoo,1\n");
        match load_csv(f.path(), None) {
            Err(Error::Parse { location, .. }) => assert!(location.contains("row 3") && location.contains("column 1")),
            other => panic!("{other:?}"),
        }
        let f = write_tmp("a,y\n1,\n");
        assert!(matches!(load_csv(f.path(), None), Err(Error::Parse { .. })));
        let f = write_tmp("a,y\n");
        assert!(matches!(load_csv(f.path(), None), Err(Error::Parse { .. })));
        assert!(load_csv(Path::new("/nonexistent/file.csv"), None).is_err());
    }

    #[test]
    fn standardized_round_trip() {
        let (ds, _) = synth_logreg(3, 50, 3, 2).unwrap();
        let raw = ds.destandardize();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("std.csv");
        ds.write_csv(&path).unwrap();
        let reloaded = load_csv(&path, None).unwrap();
        // The reloaded set is already standardized, so its own transform is the identity
        // up to rounding; undo the original transform on top of it.
        for (row, orig) in reloaded.destandardize().iter().zip(&raw) {
            for (j, (&v, &o)) in row.iter().zip(orig).enumerate() {
                assert!((v * ds.stds[j] + ds.means[j] - o).abs() < 1e-12);
            }
        }
        for j in 0..3 {
            let col: Vec<f64> = ds.features.iter().map(|r| r[j]).collect();
            let m = col.iter().sum::<f64>() / 50.0;
            let s = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 50.0).sqrt();
            assert!(m.abs() <= 1e-9 && (s - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn synthetic_data_is_reproducible() {
        assert_eq!(synth_logreg(5, 100, 4, 3).unwrap(), synth_logreg(5, 100, 4, 3).unwrap());
        assert!(synth_logreg(5, 2, 4, 3).is_err());
    }

    #[test]
    fn minibatch_properties() {
        let mut r = rng::stream(1, &[]);
        let mut all = sample_minibatch(&mut r, 10, 10).unwrap();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        let b = sample_minibatch(&mut r, 100, 10).unwrap();
        let mut s = b.clone();
        s.sort();
        s.dedup();
        assert_eq!(s.len(), 10);
        assert!(b.iter().all(|&i| i < 100));
        assert!(sample_minibatch(&mut r, 5, 6).is_err());
        assert!(sample_minibatch(&mut r, 5, 0).is_err());
    }

    #[test]
    fn zero_weights_give_even_labels() {
        let cfg = SynthConfig { seed: 2, n: 10_000, clusters: 1, weight_scale: 0.0, ..SynthConfig::default() };
        let (ds, w) = synth_logreg_with(&cfg).unwrap();
        assert!(w.iter().all(|&v| v == 0.0));
        let rate = ds.targets.iter().sum::<f64>() / 10_000.0;
        assert!((rate - 0.5).abs() <= 4.0 * 0.005, "base rate {rate}");
    }

    #[test]
    fn logistic_fit_recovers_weight_direction() {
        use nalgebra::{DMatrix, DVector};
        let cfg = SynthConfig { seed: 9, n: 10_000, dim: 5, clusters: 4, weight_scale: 2.0, ..SynthConfig::default() };
        let (ds, w) = synth_logreg_with(&cfg).unwrap();
        let raw = ds.destandardize();
        let d = w.len();
        // Newton iterations on the ridge-stabilised log-likelihood.
        let mut beta = DVector::<f64>::zeros(d);
        for _ in 0..30 {
            let mut grad = DVector::<f64>::zeros(d);
            let mut hess = DMatrix::<f64>::identity(d, d) * 1e-6;
            for (x, &y) in raw.iter().zip(&ds.targets) {
                let x = DVector::from_column_slice(x);
                let p = sigmoid(x.dot(&beta));
                grad += &x * (p - y);
                hess += &x * x.transpose() * (p * (1.0 - p));
            }
            grad += &beta * 1e-6;
            beta -= hess.lu().solve(&grad).unwrap();
        }
        let w = DVector::from_vec(w);
        let cos = beta.dot(&w) / (beta.norm() * w.norm());
        assert!(cos > 0.95, "cosine {cos}");
    }

    #[test]
    fn minibatches_are_uniform() {
        let mut r = rng::stream(4, &[]);
        let (n, size, batches) = (100, 10, 100_000);
        let mut counts = vec![0usize; n];
        for _ in 0..batches {
            for i in sample_minibatch(&mut r, n, size).unwrap() {
                counts[i] += 1;
            }
        }
        let p = size as f64 / n as f64;
        let se = (p * (1.0 - p) / batches as f64).sqrt();
        for &c in &counts {
            assert!((c as f64 / batches as f64 - p).abs() <= 4.0 * se);
        }
        let expected = (batches * size) as f64 / n as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 0.999 quantile of chi-square with 99 degrees of freedom.
        assert!(chi2 < 148.23, "chi-square {chi2}");
    }
}
