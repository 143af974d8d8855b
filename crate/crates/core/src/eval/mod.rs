//! Mode diversity, mini planning scores and the paradigm comparison harness.

pub mod benchmark;
pub mod diversity;
pub mod metrics;

pub use benchmark::{run_benchmark, BenchmarkConfig, BenchmarkReport, BenchmarkRow, Paradigm, PlannerEntry};
pub use diversity::{diversity, diversity_score, DiversityInput};
pub use metrics::{mini_pdm, MiniScore};
