//! Coverage-guided greybox fuzzing with tree-structured seed scheduling.
//!
//! Retained inputs form a seed mutation tree; a UCT descent over that tree
//! picks the next seed to fuzz. Queue-based baseline schedulers, a synthetic
//! branch-program target, an external-process target and a small
//! experiment harness are included.

pub mod bench;
pub mod campaign;
pub mod corpus;
pub mod coverage;
pub mod mutation;
pub mod report;
pub mod rng;
pub mod scheduler;
pub mod seed_tree;
pub mod target;

pub use campaign::{run_campaign, Budget, Campaign, CampaignConfig, CampaignError, CampaignOutcome, CampaignStats, RetentionMode};
pub use coverage::{BranchId, BranchSet, CoverageMap};
pub use scheduler::{Policy, SchedulerState, Selection};
pub use seed_tree::{SeedId, SeedMutationTree};
pub use target::{ExecStatus, ExecutionResult, Input, InputId, Target};
