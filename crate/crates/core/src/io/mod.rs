mod bundle;
mod config;
mod container;
mod fs;
mod provenance;

pub use bundle::{
    dataset_from_container, dataset_to_container, load_controller, load_dataset, load_gnocchi, load_lfads,
    load_vectors, save_controller, save_dataset, save_gnocchi, save_lfads, save_vectors, KIND_CONTROLLER,
    KIND_DATASET, KIND_GNOCCHI, KIND_LFADS, KIND_VECTORS,
};
pub use config::{ExperimentConfig, RunConfig};
pub use container::{Container, DType, Tensor, TensorData, MAGIC, SCHEMA_VERSION};
pub use fs::{atomic_write, read_text};
pub use provenance::Provenance;
