//! Synthetic data, tensor files, sweeps over predictor hyperparameters,
//! Pareto frontiers and report files.

mod audit;
mod pareto;
mod report;
mod sweep;
mod synth;
mod tensor_io;

pub use audit::{audit_sparse_consistency, AuditConfig, AuditReport};
pub use pareto::{pareto_frontier, ParetoPoint};
pub use report::{
    aggregate_records, frontier_by_method, read_sweep_csv, report, write_pareto_csv,
    write_sweep_csv, AggregateRecord, MethodSummary, Summary,
};
pub use sweep::{
    extract_gold, fit_artifacts, prepare_projected, run_experiment, run_sweep, EvalInstance,
    ExperimentOutput, HeadArtifacts, HeadKey, MethodSpec, ProjectionSettings, SweepConfig,
    SweepRecord,
};
pub use synth::{generate_instances, Generator, HeadInstance, SyntheticSpec};
pub use tensor_io::{
    load_qk, load_tensor, save_instances, save_tensor, Manifest, ManifestEntry, Role,
};
