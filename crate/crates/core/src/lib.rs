//! Streaming sparse Gaussian process regression.
//!
//! Online variational (VFE) and Power-EP updates of a pseudo-point posterior,
//! with exact and batch-sparse baselines and a small experiment harness.

pub mod batch_sgp;
pub mod error;
pub mod exact_gp;
pub mod harness;
pub mod kernel;
pub mod linalg;
pub mod optimizer;
pub mod posterior;
pub mod predictive;
pub mod streaming_pep;
pub mod streaming_vfe;

pub use error::{GpError, Result};
pub use harness::data::DataBatch;
pub use kernel::{Hyperparams, InputMatrix};
pub use posterior::SparsePosterior;
pub use predictive::PredictiveMarginals;
pub use streaming_pep::PepConfig;
pub use streaming_vfe::EnergyBreakdown;
