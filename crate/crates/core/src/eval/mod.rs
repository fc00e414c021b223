//! Metrics, channel permutations, the shuffle audit, and the order-dependent contrast model.

pub mod audit;
pub mod baseline;
pub mod metrics;
pub mod permutation;

pub use audit::{cpi_audit, evaluate, AuditConfig, AuditRow, AuditSummary, AuditTable, Forecaster};
pub use baseline::{ContrastBaselineParams, ContrastConfig};
pub use metrics::{mae, wape, MetricAccumulator, MetricReport, ShuffleMode, WAPE_EPS_SCALE};
pub use permutation::{apply_permutation, sample_partial_permutation, PermutationMap};
