use std::path::Path;

use ndarray::{Array1, Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::diffusion::{GnocchiConfig, GnocchiModel};
use crate::error::{Error, Result};
use crate::io::container::{Container, Tensor};
use crate::lfads::{LfadsConfig, LfadsModel, LfadsParams};
use crate::nn::Params;
use crate::synth::{ChannelScaler, ControllerPolicy, Grid, TrialDataset, TrialMeta};

pub const KIND_DATASET: &str = "dataset";
pub const KIND_GNOCCHI: &str = "gnocchi";
pub const KIND_LFADS: &str = "lfads";
pub const KIND_CONTROLLER: &str = "controller";
pub const KIND_VECTORS: &str = "vectors";

#[derive(Serialize, Deserialize)]
struct DatasetMeta {
    grid: Grid,
    trials: Vec<TrialMeta>,
}

fn shape3<T>(a: &Array3<T>) -> Vec<usize> {
    a.shape().to_vec()
}

fn std_vec<T: Clone, D: ndarray::Dimension>(a: &ndarray::Array<T, D>) -> Vec<T> {
    a.as_standard_layout().iter().cloned().collect()
}

pub fn dataset_to_container(ds: &TrialDataset) -> Result<Container> {
    let meta = serde_json::to_value(DatasetMeta {
        grid: ds.grid.clone(),
        trials: ds.trials.clone(),
    })?;
    let mut c = Container::new(KIND_DATASET, meta);
    c.insert("activity", Tensor::f32(shape3(&ds.activity), std_vec(&ds.activity)));
    c.insert("behavior", Tensor::f32(ds.behavior.shape().to_vec(), std_vec(&ds.behavior)));
    c.insert("endpoints", Tensor::f32(shape3(&ds.endpoints), std_vec(&ds.endpoints)));
    Ok(c)
}

fn array3_f32(t: &Tensor) -> Result<Array3<f32>> {
    let s = &t.shape;
    if s.len() != 3 {
        return Err(Error::Format(format!("expected a rank-3 tensor, got shape {s:?}")));
    }
    Array3::from_shape_vec((s[0], s[1], s[2]), t.as_f32()?.to_vec()).map_err(|e| Error::Format(e.to_string()))
}

pub fn dataset_from_container(c: &Container) -> Result<TrialDataset> {
    let meta: DatasetMeta = serde_json::from_value(c.meta.clone())?;
    let activity = array3_f32(c.tensor("activity")?)?;
    let endpoints = array3_f32(c.tensor("endpoints")?)?;
    let b = c.tensor("behavior")?;
    let behavior = Array2::from_shape_vec((b.shape[0], b.shape[1]), b.as_f32()?.to_vec())
        .map_err(|e| Error::Format(e.to_string()))?;
    let n = meta.trials.len();
    if activity.dim().0 != n || behavior.nrows() != n || endpoints.dim().0 != n {
        return Err(Error::Format("trial count differs between tensors and metadata".into()));
    }
    Ok(TrialDataset {
        grid: meta.grid,
        activity,
        behavior,
        endpoints,
        trials: meta.trials,
    })
}

pub fn save_dataset(path: &Path, ds: &TrialDataset) -> Result<()> {
    dataset_to_container(ds)?.write(path)
}

pub fn load_dataset(path: &Path) -> Result<TrialDataset> {
    dataset_from_container(&Container::read_kind(path, KIND_DATASET)?)
}

fn params_tensor<P: Params>(p: &P) -> Tensor {
    let flat = p.flatten();
    Tensor::f64(vec![flat.len()], flat)
}

fn assign_params<P: Params>(p: &mut P, t: &Tensor) -> Result<()> {
    let flat = t.as_f64()?;
    if flat.len() != p.num_params() {
        return Err(Error::Format(format!(
            "parameter vector has {} values, architecture needs {}",
            flat.len(),
            p.num_params()
        )));
    }
    p.assign(flat);
    Ok(())
}

fn insert_scaler(c: &mut Container, s: &ChannelScaler) {
    c.insert("scaler_mean", Tensor::f64(vec![s.mean.len()], s.mean.to_vec()));
    c.insert("scaler_std", Tensor::f64(vec![s.std.len()], s.std.to_vec()));
}

fn read_scaler(c: &Container) -> Result<ChannelScaler> {
    Ok(ChannelScaler {
        mean: Array1::from(c.tensor("scaler_mean")?.as_f64()?.to_vec()),
        std: Array1::from(c.tensor("scaler_std")?.as_f64()?.to_vec()),
    })
}

#[derive(Serialize, Deserialize)]
struct ModelMeta<C> {
    config: C,
    channels: usize,
    n_bins: usize,
}

pub fn save_gnocchi(path: &Path, m: &GnocchiModel) -> Result<()> {
    let meta = serde_json::to_value(ModelMeta {
        config: m.config.clone(),
        channels: m.channels(),
        n_bins: m.n_bins,
    })?;
    let mut c = Container::new(KIND_GNOCCHI, meta);
    c.insert("params", params_tensor(&m.params));
    insert_scaler(&mut c, &m.scaler);
    c.write(path)
}

pub fn load_gnocchi(path: &Path) -> Result<GnocchiModel> {
    let c = Container::read_kind(path, KIND_GNOCCHI)?;
    let meta: ModelMeta<GnocchiConfig> = serde_json::from_value(c.meta.clone())?;
    let mut params = meta.config.init_params(meta.channels, &mut ChaCha8Rng::seed_from_u64(0));
    assign_params(&mut params, c.tensor("params")?)?;
    Ok(GnocchiModel {
        schedule: meta.config.schedule()?,
        config: meta.config,
        params,
        scaler: read_scaler(&c)?,
        n_bins: meta.n_bins,
    })
}

pub fn save_lfads(path: &Path, m: &LfadsModel) -> Result<()> {
    let meta = serde_json::to_value(ModelMeta {
        config: m.config.clone(),
        channels: m.channels(),
        n_bins: m.n_bins,
    })?;
    let mut c = Container::new(KIND_LFADS, meta);
    c.insert("params", params_tensor(&m.params));
    insert_scaler(&mut c, &m.scaler);
    c.write(path)
}

pub fn load_lfads(path: &Path) -> Result<LfadsModel> {
    let c = Container::read_kind(path, KIND_LFADS)?;
    let meta: ModelMeta<LfadsConfig> = serde_json::from_value(c.meta.clone())?;
    let cfg = &meta.config;
    let mut params = LfadsParams::new(
        meta.channels,
        cfg.ic_encoder_dim,
        cfg.ic_dim,
        cfg.generator_dim,
        cfg.factor_dim,
        cfg.cell_clip,
        &mut ChaCha8Rng::seed_from_u64(0),
    );
    assign_params(&mut params, c.tensor("params")?)?;
    Ok(LfadsModel {
        config: meta.config,
        params,
        scaler: read_scaler(&c)?,
        n_bins: meta.n_bins,
    })
}

pub fn save_controller(path: &Path, p: &ControllerPolicy) -> Result<()> {
    let mut c = Container::new(KIND_CONTROLLER, json!({ "hidden_size": p.gru.hidden_size() }));
    c.insert("params", params_tensor(p));
    c.write(path)
}

pub fn load_controller(path: &Path) -> Result<ControllerPolicy> {
    let c = Container::read_kind(path, KIND_CONTROLLER)?;
    let hidden = c.meta["hidden_size"]
        .as_u64()
        .ok_or_else(|| Error::Format("controller without hidden_size".into()))? as usize;
    let mut p = ControllerPolicy::new(hidden, &mut ChaCha8Rng::seed_from_u64(0));
    assign_params(&mut p, c.tensor("params")?)?;
    Ok(p)
}

/// Named per-trial vectors, e.g. heldout errors.
pub fn save_vectors(path: &Path, vectors: &[(&str, &[f64])]) -> Result<()> {
    let mut c = Container::new(KIND_VECTORS, serde_json::Value::Null);
    for (name, v) in vectors {
        c.insert(*name, Tensor::f64(vec![v.len()], v.to_vec()));
    }
    c.write(path)
}

pub fn load_vectors(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let c = Container::read_kind(path, KIND_VECTORS)?;
    c.tensors
        .iter()
        .map(|(k, t)| Ok((k.clone(), t.as_f64()?.to_vec())))
        .collect()
}
