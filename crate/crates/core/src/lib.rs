//! Appearance-aware multi-view diffusion engine for novel view synthesis
//! from in-the-wild style imagery, at desk scale.
//!
//! The crate covers the full pipeline: scene I/O and COLMAP ingestion,
//! procedural scene synthesis with controlled appearance variation, camera
//! math (Plücker raymaps, pose normalization, trajectories), depth-based
//! warp conditioning, a lossless latent codec, a trainable appearance
//! encoder, zero-terminal-SNR diffusion with velocity prediction, slot
//! batch assembly with appearance-aware classifier-free guidance, a toy
//! multi-view denoiser with hand-written gradients, and evaluation metrics.
//!
//! Everything numeric is generic over [`Scalar`]; the pipeline instantiates
//! at [`Real`] (`f64`).

pub mod appearance;
pub mod assembly;
pub mod camera;
pub mod checkpoint;
pub mod config;
pub mod scenefmt;
pub mod synthdata;
pub mod codec;
pub mod denoiser;
pub mod eval;
pub mod math;
pub mod nn;
pub mod scalar;
pub mod schedule;
pub mod tensor;
pub mod warp;

pub use scalar::Scalar;

/// Default pipeline scalar type.
pub type Real = f64;

pub type Vec3r = math::Vec3<Real>;
pub type Mat3r = math::Mat3<Real>;
pub type Rigidr = math::Rigid<Real>;
pub type Tensorr = tensor::Tensor<Real>;
