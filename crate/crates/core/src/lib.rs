pub mod analysis;
pub mod basenet;
pub mod error;
pub mod gradcheck;
pub mod gradsuite;
pub mod hypernet;
pub mod image;
pub mod model;
pub mod operators;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
