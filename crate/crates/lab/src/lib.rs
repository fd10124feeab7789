//! Scenario configs, verification experiments and reports for `bpve-core`.

pub mod config;
pub mod experiments;
pub mod mc;
pub mod report;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] bpve_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
