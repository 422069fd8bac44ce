pub mod autograd;
pub mod container;
pub mod cost;
pub mod error;
pub mod gemm;
pub mod gradcheck;
pub mod nn;
pub mod numeric;
pub mod sampling;
pub mod synth;
pub mod temporal;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use numeric::Precision;
pub use tensor::{Tensor, VideoTensor};
