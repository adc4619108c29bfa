pub mod autodiff;
pub mod data_io;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod jobs;
pub mod losses;
pub mod model;
pub mod optim;
pub mod plot;
pub mod scalar;
pub mod seeding;
pub mod synthgen;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;

pub use model::Model64;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Model32 = model::Model<f32>;
