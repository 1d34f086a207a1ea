use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered `key = value` metrics, one per line.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    entries: Vec<(String, f64)>,
}

impl MetricReport {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert or overwrite.
    pub fn set(&mut self, key: impl Into<String>, value: f64) {
        let key = key.into();
        assert!(
            !key.is_empty() && !key.contains(['=', '\n', '#']),
            "metric keys must be single tokens"
        );
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key, value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.entries.iter().find(|(k, _)| k == key).map(|e| e.1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Copy every entry of `other` under `prefix.`.
    pub fn merge_prefixed(&mut self, prefix: &str, other: &MetricReport) {
        for (k, v) in other.iter() {
            self.set(format!("{prefix}.{k}"), v);
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut r = Self::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("metric line {}: missing '='", n + 1)))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("metric line {}: bad number {:?}", n + 1, v.trim())))?;
            r.set(k.trim(), v);
        }
        Ok(r)
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            // `{:?}` on f64 prints the shortest round-tripping form and keeps inf/NaN parseable.
            writeln!(f, "{k} = {v:?}")?;
        }
        Ok(())
    }
}
