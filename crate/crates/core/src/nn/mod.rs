//! Small numerical core shared by the controller, the diffusion model and the
//! sequential autoencoder: GRU cells with hand-written backward passes, affine
//! layers, Adam, step embeddings and a finite-difference gradient oracle.

mod adam;
mod dropout;
mod embedding;
mod gradcheck;
mod gru;
mod linear;
pub(crate) mod params;

pub use adam::{Adam, AdamConfig};
pub use dropout::dropout_mask;
pub use embedding::sinusoidal_embedding;
pub use gradcheck::{grad_check, GradCheck, GradCheckOptions};
pub use gru::{BiGru, BiGruCache, Gru, GruCache, GruStepCache};
pub use linear::Linear;
pub use params::{clip_grad_norm, Params};

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
