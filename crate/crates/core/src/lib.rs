//! Model-based and learned CT reconstruction.
//!
//! The crate covers the full chain used by supervised–unsupervised (SUPER)
//! reconstruction: a matched Siddon projector pair and FBP ([`projector`],
//! [`fbp`]), low-dose simulation ([`sim`]), union-of-transforms sparse coding
//! and learning ([`sparsity`], [`learn`]), the relaxed OS-LALM family of
//! solvers for PWLS-EP / PWLS-ULTRA ([`solvers`]), the SPULTRA surrogate
//! loop ([`spultra`]), and greedy layer-wise SUPER training ([`denoiser`],
//! [`super_model`]). Image quality metrics live in [`metrics`].
//!
//! Images are attenuation maps in mm⁻¹; HU conversions use the image's
//! `mu_water`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod denoiser;
pub mod error;
pub mod fbp;
pub mod geometry;
pub mod image;
pub mod learn;
pub mod metrics;
pub mod phantom;
pub mod projector;
pub mod sim;
pub mod solvers;
pub mod sparsity;
pub mod spultra;
pub mod super_model;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use geometry::{Geometry, GeometryKind};
pub use image::{Image, Sinogram, SinogramKind, MU_WATER};
pub use projector::{MatrixProjector, Projector, SiddonProjector};
