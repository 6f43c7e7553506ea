mod bytes;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod model;
pub mod ndnum;
pub mod synth;
pub mod textgeo;
pub mod train;

pub use error::{Error, Result};
