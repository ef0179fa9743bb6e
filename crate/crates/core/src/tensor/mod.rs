//! Minimal dense linear algebra and reverse-mode autodiff used by the
//! conditioning adapters and the toy denoiser.

mod mat;
pub mod nn;
mod optim;
mod params;
mod tape;

pub use mat::Mat;
pub use optim::{AdamW, AdamWConfig};
pub use params::{Gradients, ParamId, ParamStore};
pub use tape::{softmax_rows, Tape, Var};
