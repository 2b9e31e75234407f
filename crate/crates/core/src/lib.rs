//! Monocular relative-depth estimation for comic panels.

mod error;

pub mod bridge;
pub mod context;
pub mod data;
pub mod depth_net;
pub mod eval;
pub mod feature_gan;
pub mod gradients;
pub mod losses;
pub mod scene;
pub mod text;
pub mod train;

pub use error::{Error, Result};
