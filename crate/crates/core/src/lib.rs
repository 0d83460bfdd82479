pub mod autoencoder;
pub mod cli;
pub mod codec;
pub mod error;
pub mod eval;
pub mod mesh;
pub mod mixture;
pub mod pipeline;
pub mod profile;
pub mod segment;
pub mod shape;
pub mod synth;
pub mod volume;

pub use error::{Error, Result};
