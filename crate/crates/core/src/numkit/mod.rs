//! Dense-network engine: matrices, feedforward layers, losses, exact
//! backpropagation and Adam.

mod adam;
mod loss;
mod mat;
mod mlp;

pub use adam::{adam_update, AdamState};
pub use loss::{cross_entropy, cross_entropy_grad, cross_entropy_rows, mse, psnr_db, softmax, CE_EPS};
pub use mat::{axpy, dot, Mat};
pub use mlp::{init_glorot, softmax_in_place, Activation, Grads, Layer, Mlp, Tape};
