//! Scenario runner, checks and experiments.

pub mod check;
pub mod metrics;
pub mod scenario;
pub mod sweep;
pub mod world;

pub use check::{exhaustive_check, verify_run, CheckBounds, CheckReport, CheckViolation, DeliveryChoice, Invariant};
pub use metrics::{is_isolated, EmittedEntry, Fate, ProposalRecord, RunMetrics, RunRecord};
pub use scenario::{parse_adversary, PacemakerConfig, ScenarioConfig, ScenarioError};
pub use sweep::{
    count_forks, fit_linear, fork_fraction_sweep, tail_fork_script, word_audit, AuditResult, LinearFit,
    LinearityBreach, SweepRow,
};
pub use world::{run_scenario, RunOutcome, World};
