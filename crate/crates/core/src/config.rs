//! Flat `key=value` configuration with dotted keys.
//!
//! ```text
//! # comment
//! seed=3
//! optimizer.model.lr=0.01
//! ```
//!
//! Every key must be one of [`KNOWN_KEYS`]; missing keys take the listed default.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// `(key, default)` for every recognised setting.
pub const KNOWN_KEYS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("replicates", "10"),
    ("batch_size", "10"),
    ("cv.order", "1"),
    ("objective", "squared-difference"),
    ("providers", "none,context-free,amortized"),
    // Amortized architectures, `;`-separated lists of hidden widths.
    ("provider.hidden", "32;32,32;128,128,128"),
    ("optimizer.model.kind", "adam"),
    ("optimizer.model.lr", "0.01"),
    ("optimizer.coeff.kind", "adam"),
    ("optimizer.coeff.lr", "0.01"),
    ("model.kind", "logistic"),
    ("model.quadratic.n", "100"),
    ("model.quadratic.p", "4"),
    ("model.quadratic.d", "3"),
    ("model.quadratic.context_dim", "3"),
    ("data.source", "synthetic"),
    ("data.path", ""),
    ("data.target", ""),
    ("data.n", "500"),
    ("data.dim", "8"),
    ("data.clusters", "4"),
    ("data.seed", "0"),
    ("variance.checkpoints", "10,200,1000"),
    ("variance.log_steps", "0,10,100,1000"),
    ("variance.draws", "100"),
    ("variance.eval_batches", "1"),
    ("dynamic.iterations", "1000"),
    ("dynamic.checkpoints", "10,200,1000"),
    ("train.iterations", "2000"),
    ("train.nelbo_samples", "100"),
    ("train.record_every", "1"),
    ("train.objectives", "gradient-sum,squared-difference"),
    ("theorem.p", "2"),
    ("theorem.d", "2"),
    ("theorem.hessian", "1,0,0,2"),
    ("theorem.linear", "0,0"),
    ("theorem.coupling", "1,0,0,1"),
    // Empty means an exact control matrix (equal to the coupling).
    ("theorem.cv_matrix", ""),
    ("theorem.eta", "0.125"),
    ("theorem.theta0", "1,1"),
    ("theorem.steps", "200"),
    ("theorem.seeds", "100"),
    ("fig1.x", "0.5,2"),
    ("fig1.y", "1,0"),
    ("fig1.mean", "0.5"),
    ("fig1.log_scale", "0"),
    ("fig1.draws", "1000000"),
    ("fig1.grid_points", "61"),
    ("fig1.search", "false"),
    ("timing.repetitions", "100"),
    ("timing.steps", "10"),
];

fn default_of(key: &str) -> Option<&'static str> {
    KNOWN_KEYS.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
}

/// Explicitly set entries; defaults are filled in on lookup.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse { location: format!("line {}", i + 1), message: format!("expected key=value, got '{line}'") })?;
            let (k, v) = (k.trim(), v.trim());
            if cfg.entries.contains_key(k) {
                return Err(Error::Parse { location: format!("line {}", i + 1), message: format!("duplicate key '{k}'") });
            }
            cfg.set(k, v).map_err(|e| Error::Parse { location: format!("line {}", i + 1), message: e.to_string() })?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if default_of(key).is_none() {
            return Err(Error::Config(format!("unknown key '{key}'")));
        }
        if value.contains('\n') {
            return Err(Error::Config(format!("value of '{key}' spans lines")));
        }
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Explicit entries only, sorted by key.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    /// Every known key with its effective value.
    pub fn resolved(&self) -> String {
        let mut keys: Vec<&str> = KNOWN_KEYS.iter().map(|(k, _)| *k).collect();
        keys.sort_unstable();
        let mut s = String::new();
        for k in keys {
            let _ = writeln!(s, "{k}={}", self.raw(k));
        }
        s
    }

    /// First 16 hex digits of the SHA-256 of [`Config::resolved`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.resolved().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn raw(&self, key: &str) -> &str {
        match self.entries.get(key) {
            Some(v) => v,
            None => default_of(key).unwrap_or_else(|| panic!("'{key}' is not a known key")),
        }
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.raw(key);
        v.parse().map_err(|_| Error::Config(format!("cannot parse '{v}' for '{key}'")))
    }

    /// Comma-separated list; empty string gives an empty list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        split_list(self.raw(key)).map(|v| v.parse().map_err(|_| Error::Config(format!("cannot parse '{v}' in '{key}'")))).collect()
    }

    pub fn strings(&self, key: &str) -> Vec<String> {
        split_list(self.raw(key)).map(str::to_string).collect()
    }
}

fn split_list(s: &str) -> impl Iterator<Item = &str> {
    s.split(',').map(str::trim).filter(|v| !v.is_empty())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parse_and_lookup() {
        let cfg = Config::parse("# c\nseed = 7\n\noptimizer.model.lr=0.5\nvariance.checkpoints=1, 2,3\n").unwrap();
        assert_eq!(cfg.get::<u64>("seed").unwrap(), 7);
        assert_eq!(cfg.get::<f64>("optimizer.model.lr").unwrap(), 0.5);
        assert_eq!(cfg.list::<usize>("variance.checkpoints").unwrap(), vec![1, 2, 3]);
        assert_eq!(cfg.get::<usize>("batch_size").unwrap(), 10);
        assert!(cfg.list::<f64>("theorem.cv_matrix").unwrap().is_empty());
    }

    #[test]
    fn bad_input_is_located() {
        assert!(matches!(Config::parse("seed=1\nnot a pair\n"), Err(Error::Parse { location, .. }) if location == "line 2"));
        assert!(matches!(Config::parse("bogus.key=1\n"), Err(Error::Parse { .. })));
        assert!(matches!(Config::parse("seed=1\nseed=2\n"), Err(Error::Parse { .. })));
        assert!(Config::parse("seed=x").unwrap().get::<u64>("seed").is_err());
    }

    #[test]
    fn hash_depends_on_effective_values() {
        let a = Config::parse("seed=0").unwrap();
        let b = Config::default();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), Config::parse("seed=1").unwrap().hash());
        assert_eq!(a.hash().len(), 16);
    }

    proptest! {
        #[test]
        fn serialize_is_a_fixed_point(
            picks in proptest::collection::vec((0usize..KNOWN_KEYS.len(), "[a-z0-9.,;_-]{0,12}"), 0..10)
        ) {
            let mut cfg = Config::default();
            for (i, v) in picks {
                cfg.set(KNOWN_KEYS[i].0, &v).unwrap();
            }
            let text = cfg.serialize();
            let again = Config::parse(&text).unwrap();
            prop_assert_eq!(&again, &cfg);
            prop_assert_eq!(again.serialize(), text);
        }
    }
}
