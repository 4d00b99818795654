//! Text-to-BRDF core.
//!
//! Everything here is `no_std` + `alloc`: the reflectance model, the sphere
//! renderer and image metric, embedding retrieval, prompt corpus tools, the
//! dense autoencoder, its training loop and the latent-space studies. File
//! formats, process adapters and the CLI live in the `matforge` crate.

#![no_std]
// `!(x > 0.0)` style checks are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod brdf;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod math;
pub mod mdl;
pub mod metric;
pub mod nn;
pub mod predict;
pub mod provider;
pub mod render;
pub mod text;
pub mod train;
pub mod vectordb;

pub use brdf::{
    directional_albedo, eval_brdf, lerp_material, sample_random_material, Direction, MaterialFull,
    MaterialParams,
};
pub use embedding::{cosine_sim, Embedding};
pub use error::{Error, ProviderError, Result};
pub use mdl::export_mdl;
pub use metric::{image_distance, DeskMetric, ImageMetric};
pub use nn::{Autoencoder, ModelShape};
pub use provider::{EmbeddingProvider, MockProvider};
pub use render::{render_sphere, tonemap, ImageBuffer, RenderConfig, Srgb8Image};
pub use vectordb::{post_process, VectorDb};
