//! Switched soft actor critic for the acrobot: a learned swing-up policy
//! hands over to an LQR balance controller when a trained gate judges the
//! state to lie inside the controller's basin of attraction.

pub mod config;
pub mod dynamics;
pub mod error;
pub mod eval;
pub mod features;
pub mod gate;
pub mod lqr;
pub mod nn;
pub mod sac;
pub mod trainer;

pub use config::RunConfig;
pub use error::{Result, SsacError};
