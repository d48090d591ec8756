//! Seed selection policies: UCT descent over the seed mutation tree and
//! four queue-based baselines.

mod baseline;
mod mcts;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::corpus::{Corpus, CorpusEntry};
use crate::coverage::BranchSet;
use crate::seed_tree::{SeedId, SeedMutationTree, TreeError};
use crate::target::InputId;

pub use baseline::BaselineState;
pub use mcts::{score_children, select_seed_mcts, seed_score, unique_branch_counts, ScoreBreakdown};

/// Exploration constant used when none is given (about sqrt(2)).
pub const DEFAULT_K: f64 = 1.4;

/// The k values of the exploration sweep.
pub const SWEEP_K_VALUES: [f64; 5] = [0.0, 0.014, 0.14, 1.4, 14.0];

#[derive(Debug, Error)]
pub enum SchedulerError {
    #[error("cannot schedule from an empty corpus")]
    EmptyCorpus,
    #[error("unknown policy {0:?} (expected mcts, fifo, rare-branch, unfuzzed-first or low-frequency)")]
    UnknownPolicy(String),
    #[error("exploration constant k must be finite and non-negative, got {0}")]
    BadK(f64),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Policy {
    Mcts,
    Fifo,
    RareBranch,
    UnfuzzedFirst,
    LowFrequency,
}

impl Policy {
    pub const ALL: [Policy; 5] = [
        Policy::Mcts,
        Policy::Fifo,
        Policy::RareBranch,
        Policy::UnfuzzedFirst,
        Policy::LowFrequency,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Policy::Mcts => "mcts",
            Policy::Fifo => "fifo",
            Policy::RareBranch => "rare-branch",
            Policy::UnfuzzedFirst => "unfuzzed-first",
            Policy::LowFrequency => "low-frequency",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = SchedulerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == norm)
            .ok_or_else(|| SchedulerError::UnknownPolicy(s.to_string()))
    }
}

/// One scheduling decision.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    /// The input to fuzz.
    pub input: InputId,
    /// The Seed node owning that input.
    pub seed_node: SeedId,
    /// Root-to-terminal path charged on backpropagation.
    pub path: Vec<SeedId>,
    pub nodes_examined: u64,
}

/// Policy, exploration constant and per-policy bookkeeping for one campaign.
#[derive(Debug, Clone)]
pub struct SchedulerState {
    policy: Policy,
    k: f64,
    nodes_examined_last: u64,
    total_nodes_examined: u64,
    selections: u64,
    scratch: Vec<u32>,
    baseline: BaselineState,
}

impl SchedulerState {
    pub fn new(policy: Policy, k: f64, map_size: usize) -> Result<Self, SchedulerError> {
        if !k.is_finite() || k < 0.0 {
            return Err(SchedulerError::BadK(k));
        }
        Ok(Self {
            policy,
            k,
            nodes_examined_last: 0,
            total_nodes_examined: 0,
            selections: 0,
            scratch: Vec::new(),
            baseline: BaselineState::new(policy, map_size),
        })
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn nodes_examined_last(&self) -> u64 {
        self.nodes_examined_last
    }

    pub fn total_nodes_examined(&self) -> u64 {
        self.total_nodes_examined
    }

    pub fn selections(&self) -> u64 {
        self.selections
    }

    pub fn select(&mut self, tree: &SeedMutationTree, corpus: &Corpus) -> Result<Selection, SchedulerError> {
        if corpus.is_empty() {
            return Err(SchedulerError::EmptyCorpus);
        }
        let selection = match self.policy {
            Policy::Mcts => mcts::select_with_scratch(tree, self.k, &mut self.scratch)?,
            _ => {
                let (input, examined) = self.baseline.select(corpus)?;
                let entry = corpus.get(input).expect("baseline picks a corpus entry");
                let mut path = tree.path_to(entry.node)?;
                if let Some(v) = tree.variant_of(entry.node) {
                    path.push(v);
                }
                Selection {
                    input,
                    seed_node: entry.node,
                    path,
                    nodes_examined: examined,
                }
            }
        };
        self.nodes_examined_last = selection.nodes_examined;
        self.total_nodes_examined += selection.nodes_examined;
        self.selections += 1;
        Ok(selection)
    }

    /// Feeds one execution's hits to policies that track branch or path
    /// frequencies.
    pub fn observe_execution(&mut self, hits: &BranchSet) {
        self.baseline.observe_execution(hits);
    }

    pub fn on_retained(&mut self, entry: &CorpusEntry) {
        self.baseline.on_retained(entry);
    }
}
