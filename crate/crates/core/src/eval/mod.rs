//! Platoon trajectory generation and the error metrics used to score it.

mod generation;
mod metrics;

pub use generation::{generate_dataset, generate_platoon, GenerationTask};
pub use metrics::{
    ae_distribution, error_grid, mae, mmaae, pmaae_distribution, EmpiricalCdf, ErrorGrid, MetricsReport,
};
