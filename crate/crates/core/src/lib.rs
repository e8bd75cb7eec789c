//! Unsupervised visible-infrared person re-identification on embedding
//! vectors.
//!
//! The crate covers the whole training loop at desk scale: synthetic
//! two-modality data ([`datagen`]), density clustering into pseudo labels
//! ([`cluster`]), centroid memory banks ([`membank`]), noise-aware contrastive
//! losses ([`plc`]), latent translation between modalities ([`bit`]), cluster
//! matching ([`sfm`]), alignment objectives ([`mla`]) and the staged trainer
//! with retrieval evaluation ([`pipeline`]). Gradients come from the small
//! reverse-mode engine in [`diffcore`].

pub mod bit;
pub mod cluster;
pub mod datagen;
pub mod diffcore;
pub mod error;
pub mod membank;
pub mod mla;
pub mod pipeline;
pub mod plc;
pub mod sfm;

pub use error::{Error, Result};
