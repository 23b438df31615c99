//! Geometric deep learning on shared-topology triangle meshes.
//!
//! The crate covers the full pipeline of a spectral graph-convolutional mesh
//! autoencoder: mesh graphs and Laplacians, quadric-error down-sampling with
//! barycentric up-sampling, Chebyshev graph convolutions with analytic
//! gradients, a two-stage training scheme (mesh autoencoder, then an image
//! encoder regressing its latent space), a synthetic linear shape model with a
//! software rasterizer, and a landmark-aligned point-to-surface evaluation.

pub mod autoencoder;
pub mod checkpoint;
pub mod encoder2d;
pub mod eval;
pub mod error;
pub mod geometry;
pub mod mesh;
pub mod nn;
pub mod sampling;
pub mod sparse;
pub mod synth;
pub mod util;

pub use error::{Error, Result};
pub use mesh::{Landmark, TriangleMesh};
pub use sparse::CsrMatrix;
