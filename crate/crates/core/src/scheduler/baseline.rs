//! Queue-based baselines, each a simplified model of one seed preference
//! rule:
//!
//! * `Fifo` walks the queue in order and only fuzzes favored seeds, where a
//!   seed is favored if it is the cheapest (`size * exec_time`) cover of
//!   some branch after a greedy cull.
//! * `LowFrequency` picks the least scheduled seed, preferring seeds whose
//!   path has been exercised by fewer executions.
//! * `RareBranch` picks the seed covering most branches at or under the
//!   current rarity cutoff.
//! * `UnfuzzedFirst` picks the oldest never-scheduled seed, else acts like
//!   `Fifo`.

use std::collections::{BTreeMap, HashMap};
use std::hash::{DefaultHasher, Hash, Hasher};

use crate::corpus::{Corpus, CorpusEntry};
use crate::coverage::{BranchId, BranchSet};
use crate::target::InputId;

use super::{Policy, SchedulerError};

#[derive(Debug, Clone)]
pub struct BaselineState {
    policy: Policy,
    // Fifo
    cursor: usize,
    favored: Vec<bool>,
    favored_dirty: bool,
    top_rated: BTreeMap<BranchId, (u128, InputId)>,
    // RareBranch
    branch_hits: Vec<u64>,
    // LowFrequency
    path_freq: HashMap<u64, u64>,
    path_hash: BTreeMap<InputId, u64>,
}

fn hash_path(hits: &BranchSet) -> u64 {
    let mut h = DefaultHasher::new();
    hits.hash(&mut h);
    h.finish()
}

impl BaselineState {
    pub fn new(policy: Policy, map_size: usize) -> Self {
        Self {
            policy,
            cursor: 0,
            favored: Vec::new(),
            favored_dirty: true,
            top_rated: BTreeMap::new(),
            branch_hits: if policy == Policy::RareBranch {
                vec![0; map_size]
            } else {
                Vec::new()
            },
            path_freq: HashMap::new(),
            path_hash: BTreeMap::new(),
        }
    }

    pub fn observe_execution(&mut self, hits: &BranchSet) {
        match self.policy {
            Policy::RareBranch => {
                for id in hits.iter() {
                    if let Some(slot) = self.branch_hits.get_mut(id.0 as usize) {
                        *slot += 1;
                    }
                }
            }
            Policy::LowFrequency => {
                *self.path_freq.entry(hash_path(hits)).or_default() += 1;
            }
            _ => {}
        }
    }

    pub fn on_retained(&mut self, entry: &CorpusEntry) {
        match self.policy {
            Policy::Fifo | Policy::UnfuzzedFirst => {
                let cost = entry.size().max(1) as u128 * entry.exec_us.max(1) as u128;
                for id in entry.branches.iter() {
                    let better = match self.top_rated.get(&id) {
                        Some(&(best, best_id)) => (cost, entry.id()) < (best, best_id),
                        None => true,
                    };
                    if better {
                        self.top_rated.insert(id, (cost, entry.id()));
                    }
                }
                self.favored_dirty = true;
            }
            Policy::LowFrequency => {
                self.path_hash.insert(entry.id(), hash_path(&entry.branches));
            }
            _ => {}
        }
    }

    /// Returns the chosen input and the number of corpus entries touched.
    pub fn select(&mut self, corpus: &Corpus) -> Result<(InputId, u64), SchedulerError> {
        if corpus.is_empty() {
            return Err(SchedulerError::EmptyCorpus);
        }
        Ok(match self.policy {
            Policy::Fifo => self.select_fifo(corpus),
            Policy::UnfuzzedFirst => {
                let entries = corpus.entries();
                match entries.iter().position(|e| e.n_scheduled == 0) {
                    Some(i) => (entries[i].id(), i as u64 + 1),
                    None => {
                        let (id, examined) = self.select_fifo(corpus);
                        (id, examined + entries.len() as u64)
                    }
                }
            }
            Policy::LowFrequency => {
                let best = corpus
                    .iter()
                    .min_by_key(|e| {
                        let freq = self
                            .path_hash
                            .get(&e.id())
                            .and_then(|h| self.path_freq.get(h))
                            .copied()
                            .unwrap_or(0);
                        (e.n_scheduled, freq, e.id())
                    })
                    .expect("non-empty");
                (best.id(), corpus.len() as u64)
            }
            Policy::RareBranch => {
                let cutoff = self.rarity_cutoff(corpus);
                let best = corpus
                    .iter()
                    .max_by(|a, b| {
                        let ka = (self.rare_count(a, cutoff), std::cmp::Reverse(a.n_scheduled), std::cmp::Reverse(a.id()));
                        let kb = (self.rare_count(b, cutoff), std::cmp::Reverse(b.n_scheduled), std::cmp::Reverse(b.id()));
                        ka.cmp(&kb)
                    })
                    .expect("non-empty");
                (best.id(), corpus.len() as u64)
            }
            Policy::Mcts => unreachable!("tree policy is not a baseline"),
        })
    }

    // Smallest power of two >= the lowest hit count among covered branches.
    fn rarity_cutoff(&self, corpus: &Corpus) -> u64 {
        let min = corpus
            .iter()
            .flat_map(|e| e.branches.iter())
            .map(|id| self.hits_of(id))
            .min()
            .unwrap_or(0);
        min.max(1).next_power_of_two()
    }

    fn hits_of(&self, id: BranchId) -> u64 {
        self.branch_hits.get(id.0 as usize).copied().unwrap_or(0)
    }

    fn rare_count(&self, entry: &CorpusEntry, cutoff: u64) -> usize {
        entry.branches.iter().filter(|&id| self.hits_of(id) <= cutoff).count()
    }

    /// Greedy cull: walk branches in ascending order and favor the top-rated
    /// seed of every branch not yet covered by a favored seed.
    fn recompute_favored(&mut self, corpus: &Corpus) -> u64 {
        self.favored = vec![false; corpus.len()];
        let mut covered = std::collections::HashSet::new();
        for (&branch, &(_, id)) in &self.top_rated {
            if covered.contains(&branch) {
                continue;
            }
            if let Some(pos) = corpus.position(id) {
                if !self.favored[pos] {
                    self.favored[pos] = true;
                    covered.extend(corpus.entries()[pos].branches.iter());
                }
            }
        }
        self.favored_dirty = false;
        corpus.len() as u64
    }

    fn select_fifo(&mut self, corpus: &Corpus) -> (InputId, u64) {
        let mut examined = 0;
        if self.favored_dirty || self.favored.len() != corpus.len() {
            examined += self.recompute_favored(corpus);
        }
        let n = corpus.len();
        let any_favored = self.favored.iter().any(|&f| f);
        for _ in 0..n {
            let pos = self.cursor % n;
            self.cursor = pos + 1;
            examined += 1;
            if !any_favored || self.favored[pos] {
                return (corpus.entries()[pos].id(), examined);
            }
        }
        unreachable!("a favored entry exists")
    }

    pub fn is_favored(&self, corpus: &Corpus, id: InputId) -> bool {
        corpus
            .position(id)
            .and_then(|p| self.favored.get(p).copied())
            .unwrap_or(false)
    }
}
