pub mod allocation;
pub mod codec;
pub mod error;
pub mod imagery;
pub mod metrics;
pub mod objectives;
pub mod quantization;
pub mod segmentation;
pub mod splat;
pub mod training;

pub use error::{Error, Result};
