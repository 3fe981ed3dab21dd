//! Region-level active learning for object detection under a label budget.

pub mod geometry;
pub mod harness;
pub mod informativeness;
pub mod ingest;
pub mod oracle;
pub mod rng;
pub mod scene;
pub mod selection;
pub mod synthgen;

pub use geometry::{Box, ImageExtent};
pub use harness::{
    run_experiment, run_experiment_with, DatasetSource, ExperimentConfig, ExperimentResult, HarnessError,
    PreparedData, Regime,
};
pub use informativeness::MethodKind;
pub use oracle::{BudgetLedger, OracleResponse, QueryKind};
pub use scene::{
    CandidateId, CandidateObject, Category, CategoryId, GroundTruthObject, GtId, ImageId, ImageStatus,
    InitialPoolConfig, PoolState, SceneDataset, SceneImage,
};
pub use selection::{Approach, SelectionParams};
pub use synthgen::{DetectorConfig, SynthConfig};
