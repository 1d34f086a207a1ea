//! Flat `key = value` experiment configuration. Keys are `section.field`,
//! e.g. `gnocchi.latent_dim = 5`. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::diffusion::GnocchiConfig;
use crate::error::{Error, Result};
use crate::io::fs::read_text;
use crate::lfads::LfadsConfig;
use crate::synth::{ControllerConfig, DatasetConfig, Grid, TimingRule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Independent model seeds for multi-seed comparisons.
    pub n_seeds: usize,
    /// Folds for cross-validated orthogonality.
    pub cv_folds: usize,
    /// Steps per navigation sweep.
    pub sweep_steps: usize,
    pub samples_per_condition: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            n_seeds: 3,
            cv_folds: 10,
            sweep_steps: 10,
            samples_per_condition: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub run: RunConfig,
    pub grid: Grid,
    pub timing: TimingRule,
    pub controller: ControllerConfig,
    pub dataset: DatasetConfig,
    pub gnocchi: GnocchiConfig,
    pub lfads: LfadsConfig,
}

fn parse_scalar(key: &str, raw: &str, current: &Value) -> Result<Value> {
    let bad = || Error::Config(format!("{key}: cannot parse {raw:?} as {current}"));
    Ok(match current {
        Value::Bool(_) => Value::Bool(raw.parse().map_err(|_| bad())?),
        Value::Number(n) if n.is_u64() => Value::from(raw.parse::<u64>().map_err(|_| bad())?),
        Value::Number(n) if n.is_i64() => Value::from(raw.parse::<i64>().map_err(|_| bad())?),
        Value::Number(_) => {
            let v: f64 = raw.parse().map_err(|_| bad())?;
            serde_json::Number::from_f64(v).map(Value::Number).ok_or_else(bad)?
        }
        Value::String(_) => Value::String(raw.trim_matches('"').to_string()),
        Value::Array(items) => {
            let parts: Vec<&str> = raw
                .trim_start_matches('[')
                .trim_end_matches(']')
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .collect();
            let proto = items.first().cloned().unwrap_or(Value::from(0.0));
            Value::Array(
                parts
                    .iter()
                    .map(|p| parse_scalar(key, p, &proto))
                    .collect::<Result<_>>()?,
            )
        }
        _ => return Err(bad()),
    })
}

fn render(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Array(items) => format!("[{}]", items.iter().map(render).collect::<Vec<_>>().join(", ")),
        Value::Number(n) => match n.as_f64() {
            Some(f) if !n.is_u64() && !n.is_i64() => format!("{f:?}"),
            _ => n.to_string(),
        },
        other => other.to_string(),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut root = serde_json::to_value(Self::default())?;
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, raw) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let key = key.trim();
            let (section, field) = key
                .split_once('.')
                .ok_or_else(|| Error::Config(format!("line {}: key {key:?} needs a section", n + 1)))?;
            let slot = root
                .get_mut(section)
                .and_then(|s| s.get_mut(field))
                .ok_or_else(|| Error::Config(format!("unknown key {key:?}")))?;
            *slot = parse_scalar(key, raw.trim(), slot)?;
        }
        serde_json::from_value(root).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?)
    }

    /// Every key with its current value, one per line, in a form `parse` reads
    /// back.
    pub fn to_text(&self) -> String {
        let root = serde_json::to_value(self).expect("config serialises");
        let mut out = String::new();
        for (section, fields) in root.as_object().expect("struct") {
            let fields: &Map<String, Value> = fields.as_object().expect("struct");
            for (k, v) in fields {
                out.push_str(&format!("{section}.{k} = {}\n", render(v)));
            }
        }
        out
    }

    /// Hex SHA-256 of the canonical text form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let c = ExperimentConfig::default();
        let text = c.to_text();
        assert!(text.contains("gnocchi.latent_dim = 5"));
        assert!(text.contains("gnocchi.mmd_lambda = 100.0"));
        assert!(text.contains("lfads.learning_rate = 0.01"));
        assert!(text.contains("lfads.coordinated_dropout_rate = 0.3"));
        assert_eq!(ExperimentConfig::parse(&text).unwrap(), c);
        assert_eq!(ExperimentConfig::parse("").unwrap(), c);
    }

    #[test]
    fn overrides_apply() {
        let c = ExperimentConfig::parse(
            "# desk run\ngnocchi.noise_predictor_hidden_size = 64\nrun.out_dir = /tmp/x\ngrid.center = [0.1, 0.4]\nlfads.kl_ic_weight = 1e-8 # small\n",
        )
        .unwrap();
        assert_eq!(c.gnocchi.noise_predictor_hidden_size, 64);
        assert_eq!(c.run.out_dir, PathBuf::from("/tmp/x"));
        assert_eq!(c.grid.center, [0.1, 0.4]);
        assert_eq!(c.lfads.kl_ic_weight, 1e-8);
        assert_ne!(c.hash(), ExperimentConfig::default().hash());
    }

    #[test]
    fn bad_input_rejected() {
        assert!(ExperimentConfig::parse("gnocchi.latent_dims = 5").is_err());
        assert!(ExperimentConfig::parse("nosection = 5").is_err());
        assert!(ExperimentConfig::parse("gnocchi.latent_dim = five").is_err());
        assert!(ExperimentConfig::parse("gnocchi.latent_dim = -1").is_err());
        assert!(ExperimentConfig::parse("gnocchi.latent_dim 5").is_err());
    }
}
