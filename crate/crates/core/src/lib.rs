//! Core library for cross-architecture semi-supervised video classification.
//!
//! Everything numeric is built on a small reverse-mode autodiff tape
//! ([`tape`]) over dense tensors ([`tensor`]). On top of that sit two small
//! video models (a 3D residual CNN and a factorised space-time transformer,
//! [`model`]), the co-training losses ([`losses`]), a synthetic clip
//! generator ([`data`]) and augmentation ([`augment`]).

pub mod augment;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod model;
pub mod ops;
pub mod rng;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use error::CoreError;
pub use scalar::Elem;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
