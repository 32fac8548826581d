pub mod agents;
pub mod app;
pub mod chem;
pub mod dataset;
pub mod evalkit;
pub mod numerics;
pub mod orchestrator;
pub mod score;
pub mod surrogate;

pub use score::EfficiencyScore;
