pub mod autograd;
pub mod checkpoint;
pub mod datagen;
pub mod decoders;
pub mod encoders;
pub mod error;
pub mod geom;
pub mod gradcheck;
pub mod harness;
pub mod model;
pub mod nn;
pub mod objectives;
pub mod pcops;
pub mod tensor;

pub use error::{Error, Result};
