//! File formats and run configuration.

pub mod config;
pub mod container;
pub mod pgm;

pub use config::{load_config, PipelineConfig};
pub use container::{read_container, write_container, Container, TensorData};
pub use pgm::export_pgm;
