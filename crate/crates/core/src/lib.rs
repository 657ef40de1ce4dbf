pub mod autograd;
pub mod baseline;
pub mod cli;
pub mod error;
pub mod imageio;
pub mod keynoise;
pub mod metrics;
pub mod netarch;
pub mod pyramid;
pub mod stego;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use pyramid::{dequantize, quantize, ImageF, ImageU8};
