pub mod checkpoint;
pub mod codegrid;
pub mod config;
pub mod dataprep;
pub mod error;
pub mod maskproc;
pub mod metrics;
pub mod pipeline;
pub mod pixelcnn;
pub mod report;
pub mod tensor;
pub mod vqvae;

pub use codegrid::CodeGrid;
pub use error::{Error, Result};
