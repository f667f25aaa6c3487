pub mod autodiff;
pub mod cli;
pub mod error;
pub mod formats;
pub mod metrics;
pub mod network;
pub mod ops;
pub mod phantom;
pub mod scalar;
pub mod solvers;
pub mod tensor;
pub mod tomo;
pub mod training;
pub mod unet;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{PadSpec, Tensor};

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type ParamSet64 = network::ParamSet<f64>;
pub type Regularizer64 = network::Regularizer<f64>;
