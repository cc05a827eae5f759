//! Joint diffusion over tiled latent canvases with swap-based merging.
//!
//! The crate builds up from tiling geometry ([`grid`]) and latent swap
//! operators ([`swap`]) through analytically tractable diffusion models
//! ([`diffusion`]) to a joint sampler that stitches overlapping subviews
//! each step ([`scheduler`]). Supporting pieces: spectral and connectivity
//! diagnostics ([`analysis`]), trajectory-similarity bounds with a
//! Monte-Carlo validator ([`bounds`]), deterministic seed streams
//! ([`seed`]), and a small tensor container plus file formats ([`grid`],
//! [`io`]).

pub mod analysis;
pub mod bounds;
pub mod diffusion;
pub mod error;
pub mod grid;
pub mod io;
pub mod scheduler;
pub mod seed;
pub mod spectral;
pub mod swap;

pub use error::{Error, Result};
