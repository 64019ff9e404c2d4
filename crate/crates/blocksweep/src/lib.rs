//! blocksweep: harvest GPU kernels from source repositories, isolate each
//! into a standalone compilable unit, synthesize timing harnesses, benchmark
//! every kernel over a (matrix size x thread-block size) grid, and analyze
//! the resulting runtime dataset for optimal thread-block choices.
//!
//! The pipeline stages are `mine -> extract -> build -> sweep -> analyze`,
//! each reading the previous stage's manifests from a corpus root. A
//! deterministic simulated backend stands in for the compiler + GPU so the
//! whole pipeline runs (and is tested) at desk scale.

pub mod analysis;
pub mod backend;
pub mod config;
pub mod corpus;
pub mod error;
pub mod extract;
pub mod harness;
pub mod measure;
pub mod pipeline;
pub mod sweep;

pub use backend::{BackendKind, BuildResult, BuildStatus, ExecutorBackend, RunOutcome, RunStatus};
pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use extract::{KernelUnit, UnitRecord, UnitStatus};
pub use harness::{LaunchConfig, MatrixSize, ParamRole, RoleTable};
pub use measure::{aggregate, evaluate_strategies, AggregateStrategy, StabilityReport};
pub use sweep::{canonical_blocks, canonical_space, BlockConfig, DatasetRow, SweepSpace};
