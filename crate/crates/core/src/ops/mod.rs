//! Differentiable primitives over [`crate::tape::Tape`].
//!
//! Every op validates shapes, computes the forward value eagerly and
//! registers a backward closure capturing whatever buffers its gradient
//! needs. Composites (linear, scaled-dot-product attention) are built from
//! the primitives so their gradients come for free.

mod basic;
mod conv;
mod matmul;
mod nn;

pub use basic::*;
pub use conv::*;
pub use matmul::*;
pub use nn::*;

use crate::error::{CoreError, Result};

pub(crate) fn check(cond: bool, op: &str, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(CoreError::ShapeMismatch(format!("{op}: {}", msg())))
    }
}
