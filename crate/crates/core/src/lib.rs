//! Conditional score-based segmentation over truncated signed distance fields.
//!
//! Segmentation masks are encoded as truncated, normalized signed distance
//! fields ([`sdf`]), corrupted by a variance-exploding diffusion ([`sde`]),
//! and recovered by sampling the reverse process with a learned,
//! image-conditioned score network ([`nn`], [`train`], [`sampler`]).
//! Repeated samples give an MMSE estimate and per-pixel uncertainty
//! ([`eval`]).
//!
//! The crate is `no_std` with `alloc`; the `std` feature (on by default)
//! only enables runtime SIMD detection in the matrix kernels and std math.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod error;
pub mod eval;
pub mod grid;
pub mod nn;
pub mod rng;
pub mod sampler;
pub mod sde;
pub mod sdf;
pub mod train;

pub use error::{Error, Result};
pub use grid::{BinaryMask, CondImage, Field, SdfMap};
