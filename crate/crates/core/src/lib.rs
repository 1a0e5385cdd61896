pub mod augment;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod io;
pub mod mask;
pub mod metrics;
pub mod morphology;
pub mod net;
pub mod ops;
pub mod rng;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use mask::{BinaryMask, InstanceMask};
pub use rng::RngState;
pub use tensor::Tensor;
