pub mod data;
pub mod equivalence;
pub mod metrics;
pub mod runner;
pub mod synth;
