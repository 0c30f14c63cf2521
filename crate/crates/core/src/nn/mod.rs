//! Dense networks, reverse-mode gradients, Adam and the squashed Gaussian head.

mod adam;
mod checkpoint;
mod gaussian;
mod mlp;

pub use adam::Adam;
pub use checkpoint::{load_weights, save_weights, NetRecord, NET_FORMAT_VERSION};
pub use gaussian::{log_one_minus_tanh_sq, GaussianHead, SquashedSample};
pub use mlp::{Head, Mlp, Tape};
