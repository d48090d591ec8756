//! The fuzzing loop: schedule, mutate, execute, retain, backpropagate.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use thiserror::Error;

use crate::corpus::{Corpus, CorpusEntry};
use crate::coverage::{BranchSet, CoverageError, CoverageMap, DEFAULT_MAP_SIZE};
use crate::mutation::{self, MutationOp, HAVOC_STACK_POW2};
use crate::report::{self, ReportError};
use crate::rng::{self, FuzzRng, Stream};
use crate::scheduler::{Policy, SchedulerError, SchedulerState, Selection, DEFAULT_K};
use crate::seed_tree::{EdgeLabel, SeedMutationTree, TreeError};
use crate::target::{ExecStatus, Input, InputId, Target, TargetError};

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("a campaign needs at least one initial input")]
    NoInitialInputs,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Target(#[from] TargetError),
    #[error(transparent)]
    Coverage(#[from] CoverageError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Budget {
    Executions(u64),
    Seconds(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetentionMode {
    /// Retain inputs that cover a branch never seen before.
    NewBranch,
    /// Retain inputs that reach a new hit-count bucket of any branch.
    NewBucket,
}

impl RetentionMode {
    pub fn name(&self) -> &'static str {
        match self {
            RetentionMode::NewBranch => "new-branch",
            RetentionMode::NewBucket => "new-bucket",
        }
    }
}

impl FromStr for RetentionMode {
    type Err = CampaignError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "new-branch" => Ok(RetentionMode::NewBranch),
            "new-bucket" => Ok(RetentionMode::NewBucket),
            other => Err(CampaignError::Config(format!("unknown retention mode {other:?}"))),
        }
    }
}

/// Whether an execution's novelty makes it a new seed. In bucket mode the
/// novelty is already expressed in bucket ids, so the test is the same.
pub fn retain_decision(novelty: &BranchSet, _mode: RetentionMode) -> bool {
    !novelty.is_empty()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignConfig {
    pub rng_seed: u64,
    pub budget: Budget,
    /// Havoc/splice executions per schedule.
    pub energy: u32,
    pub policy: Policy,
    pub k: f64,
    pub map_size: usize,
    pub max_input_len: usize,
    pub retention: RetentionMode,
    /// Run the bit/byte-flip, arith and interesting-value pass on a seed's
    /// first schedule.
    pub deterministic_stage: bool,
    /// Probability that a havoc execution starts from a splice.
    pub splice_rate: f64,
    pub havoc_stack_pow2: u32,
    /// Executions between two stats rows.
    pub stats_interval: u64,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            rng_seed: 0,
            budget: Budget::Executions(100_000),
            energy: 256,
            policy: Policy::Mcts,
            k: DEFAULT_K,
            map_size: DEFAULT_MAP_SIZE,
            max_input_len: 1024,
            retention: RetentionMode::NewBranch,
            deterministic_stage: true,
            splice_rate: 0.125,
            havoc_stack_pow2: HAVOC_STACK_POW2,
            stats_interval: 1000,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, CampaignError> {
    value
        .trim()
        .parse()
        .map_err(|_| CampaignError::Config(format!("bad value {value:?} for {key}")))
}

/// Parses flat `key=value` text; `#` starts a comment line.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>, CampaignError> {
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CampaignError::Config(format!("line {}: expected key=value", n + 1)))?;
        map.insert(key.trim().replace('_', "-"), value.trim().to_string());
    }
    Ok(map)
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<(), CampaignError> {
        if self.energy == 0 {
            return Err(CampaignError::Config("energy must be at least 1".into()));
        }
        if !self.k.is_finite() || self.k < 0.0 {
            return Err(CampaignError::Config(format!("k must be non-negative, got {}", self.k)));
        }
        crate::coverage::check_map_size(self.map_size)?;
        if self.retention == RetentionMode::NewBucket && self.map_size < 8 {
            return Err(CampaignError::Config("bucket retention needs map-size >= 8".into()));
        }
        if self.max_input_len == 0 {
            return Err(CampaignError::Config("max-input-len must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.splice_rate) {
            return Err(CampaignError::Config("splice-rate must lie in [0,1]".into()));
        }
        if let Budget::Seconds(s) = self.budget {
            if !(s.is_finite() && s >= 0.0) {
                return Err(CampaignError::Config("budget-secs must be non-negative".into()));
            }
        }
        if self.stats_interval == 0 {
            return Err(CampaignError::Config("stats-interval must be at least 1".into()));
        }
        Ok(())
    }

    /// Applies one `key=value` setting. Returns `false` for keys this
    /// config does not own.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<bool, CampaignError> {
        match key.replace('_', "-").as_str() {
            "rng-seed" => self.rng_seed = parse_value(key, value)?,
            "budget-execs" => self.budget = Budget::Executions(parse_value(key, value)?),
            "budget-secs" => self.budget = Budget::Seconds(parse_value(key, value)?),
            "energy" => self.energy = parse_value(key, value)?,
            "policy" => self.policy = value.parse()?,
            "k" => self.k = parse_value(key, value)?,
            "map-size" => self.map_size = parse_value(key, value)?,
            "max-input-len" => self.max_input_len = parse_value(key, value)?,
            "retention" => self.retention = value.parse()?,
            "deterministic" => self.deterministic_stage = parse_value(key, value)?,
            "splice-rate" => self.splice_rate = parse_value(key, value)?,
            "havoc-stack-pow2" => self.havoc_stack_pow2 = parse_value(key, value)?,
            "stats-interval" => self.stats_interval = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn from_kv(text: &str) -> Result<Self, CampaignError> {
        let mut config = Self::default();
        for (key, value) in parse_kv(text)? {
            if !config.apply(&key, &value)? {
                return Err(CampaignError::Config(format!("unknown key {key:?}")));
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn to_kv(&self) -> String {
        let budget = match self.budget {
            Budget::Executions(n) => format!("budget-execs={n}"),
            Budget::Seconds(s) => format!("budget-secs={s}"),
        };
        format!(
            "rng-seed={}\n{budget}\nenergy={}\npolicy={}\nk={}\nmap-size={}\nmax-input-len={}\nretention={}\ndeterministic={}\nsplice-rate={}\nhavoc-stack-pow2={}\nstats-interval={}\n",
            self.rng_seed,
            self.energy,
            self.policy,
            self.k,
            self.map_size,
            self.max_input_len,
            self.retention.name(),
            self.deterministic_stage,
            self.splice_rate,
            self.havoc_stack_pow2,
            self.stats_interval,
        )
    }
}

/// One stats sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StatsRow {
    pub execs: u64,
    pub schedules: u64,
    pub coverage: usize,
    pub seeds: usize,
    pub crashes: usize,
    pub nodes_examined: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CampaignStats {
    pub executions: u64,
    pub schedules: u64,
    pub seeds_retained: usize,
    /// Unique crashes as (input id, execution index).
    pub crashes: Vec<(InputId, u64)>,
    pub time_to_first_crash: Option<u64>,
    pub total_nodes_examined: u64,
    pub rows: Vec<StatsRow>,
}

impl CampaignStats {
    pub fn coverage_series(&self) -> Vec<(u64, usize)> {
        self.rows.iter().map(|r| (r.execs, r.coverage)).collect()
    }

    pub fn final_coverage(&self) -> usize {
        self.rows.last().map(|r| r.coverage).unwrap_or(0)
    }
}

/// Everything a finished campaign leaves behind.
#[derive(Debug, Clone)]
pub struct CampaignOutcome {
    pub stats: CampaignStats,
    pub corpus: Corpus,
    pub tree: SeedMutationTree,
    pub crash_inputs: Vec<Input>,
    pub coverage: BranchSet,
}

impl CampaignOutcome {
    /// Writes `corpus/`, `crashes/`, `stats.csv`, `tree.json` and
    /// `config.txt` under `out`.
    pub fn write_dir(&self, out: &Path, config: &CampaignConfig) -> Result<(), ReportError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| ReportError::Io { path, source }
        };
        fs::create_dir_all(out).map_err(io(out))?;
        let corpus_dir = out.join("corpus");
        self.corpus.write_dir(&corpus_dir).map_err(io(&corpus_dir))?;
        let crash_dir = out.join("crashes");
        fs::create_dir_all(&crash_dir).map_err(io(&crash_dir))?;
        for input in &self.crash_inputs {
            let path = crash_dir.join(format!("{}.bin", input.id));
            fs::write(&path, &input.bytes).map_err(io(&path))?;
        }
        report::write_stats_csv(&self.stats, &out.join("stats.csv"))?;
        let tree = out.join("tree.json");
        fs::write(&tree, self.tree.to_json()).map_err(io(&tree))?;
        let cfg = out.join("config.txt");
        fs::write(&cfg, config.to_kv()).map_err(io(&cfg))?;
        Ok(())
    }
}

/// Per-schedule summary returned by [`Campaign::run_schedule`].
#[derive(Debug, Clone)]
pub struct ScheduleReport {
    pub selection: Selection,
    pub executions: u64,
    pub retained: Vec<InputId>,
}

pub struct Campaign<T: Target> {
    config: CampaignConfig,
    target: T,
    max_len: usize,
    map: CoverageMap,
    tree: SeedMutationTree,
    corpus: Corpus,
    scheduler: SchedulerState,
    stats: CampaignStats,
    havoc_rng: FuzzRng,
    splice_rng: FuzzRng,
    next_input: u64,
    crash_paths: HashSet<BranchSet>,
    crash_inputs: Vec<Input>,
    started: Instant,
}

impl<T: Target> fmt::Debug for Campaign<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Campaign")
            .field("config", &self.config)
            .field("stats", &self.stats)
            .finish_non_exhaustive()
    }
}

enum Flow {
    Continue,
    Stop,
}

impl<T: Target> Campaign<T> {
    /// Executes every initial input once and builds the initial tree.
    pub fn new(config: CampaignConfig, target: T, initial: Vec<Vec<u8>>) -> Result<Self, CampaignError> {
        config.validate()?;
        if initial.is_empty() {
            return Err(CampaignError::NoInitialInputs);
        }
        let max_len = match target.max_input_len() {
            Some(l) => l.min(config.max_input_len),
            None => config.max_input_len,
        };
        let mut campaign = Self {
            map: CoverageMap::new(config.map_size)?,
            tree: SeedMutationTree::new(vec![(InputId(0), BranchSet::new())])?,
            corpus: Corpus::new(),
            scheduler: SchedulerState::new(config.policy, config.k, config.map_size)?,
            stats: CampaignStats::default(),
            havoc_rng: rng::stream(config.rng_seed, Stream::Havoc),
            splice_rng: rng::stream(config.rng_seed, Stream::Splice),
            next_input: 0,
            crash_paths: HashSet::new(),
            crash_inputs: Vec::new(),
            started: Instant::now(),
            max_len,
            target,
            config,
        };

        let mut seeds = Vec::with_capacity(initial.len());
        for bytes in initial {
            let mut bytes = bytes;
            bytes.truncate(max_len);
            let (hits, exec_us, status) = campaign.execute(&bytes)?;
            campaign.map.record_execution(&hits)?;
            campaign.scheduler.observe_execution(&hits);
            let id = campaign.fresh_id();
            if status == ExecStatus::Crash {
                campaign.note_crash(id, &bytes, &hits);
            }
            seeds.push((Input { id, bytes }, hits, exec_us));
        }
        campaign.tree = SeedMutationTree::new(seeds.iter().map(|(i, h, _)| (i.id, h.clone())).collect())?;
        let children = campaign.tree.node(campaign.tree.root())?.children.clone();
        for ((input, branches, exec_us), node) in seeds.into_iter().zip(children) {
            let entry = CorpusEntry {
                input,
                branches,
                exec_us,
                n_scheduled: 0,
                node,
            };
            campaign.scheduler.on_retained(&entry);
            campaign.corpus.push(entry);
        }
        campaign.stats.seeds_retained = campaign.corpus.len();
        campaign.push_row();
        Ok(campaign)
    }

    pub fn config(&self) -> &CampaignConfig {
        &self.config
    }

    pub fn tree(&self) -> &SeedMutationTree {
        &self.tree
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn stats(&self) -> &CampaignStats {
        &self.stats
    }

    pub fn scheduler(&self) -> &SchedulerState {
        &self.scheduler
    }

    pub fn coverage_map(&self) -> &CoverageMap {
        &self.map
    }

    pub fn budget_exhausted(&self) -> bool {
        match self.config.budget {
            Budget::Executions(n) => self.stats.executions >= n,
            Budget::Seconds(s) => self.started.elapsed().as_secs_f64() >= s,
        }
    }

    fn fresh_id(&mut self) -> InputId {
        let id = InputId(self.next_input);
        self.next_input += 1;
        id
    }

    fn execute(&mut self, bytes: &[u8]) -> Result<(BranchSet, u64, ExecStatus), CampaignError> {
        let result = self.target.execute(bytes)?;
        self.stats.executions += 1;
        let hits = match self.config.retention {
            RetentionMode::NewBranch => result.hits,
            RetentionMode::NewBucket => result.bucketed_hits(self.config.map_size),
        };
        Ok((hits, result.duration_us, result.status))
    }

    fn note_crash(&mut self, id: InputId, bytes: &[u8], hits: &BranchSet) {
        if self.crash_paths.insert(hits.clone()) {
            let at = self.stats.executions;
            self.stats.crashes.push((id, at));
            self.stats.time_to_first_crash.get_or_insert(at);
            self.crash_inputs.push(Input {
                id,
                bytes: bytes.to_vec(),
            });
        }
    }

    fn push_row(&mut self) {
        self.stats.rows.push(StatsRow {
            execs: self.stats.executions,
            schedules: self.stats.schedules,
            coverage: self.map.set_count(),
            seeds: self.corpus.len(),
            crashes: self.stats.crashes.len(),
            nodes_examined: self.stats.total_nodes_examined,
        });
    }

    // Runs one mutated input and retains it under the scheduled seed if it
    // covers anything new.
    fn try_input(&mut self, bytes: Vec<u8>, selection: &Selection, kind: &str, retained: &mut Vec<InputId>) -> Result<Flow, CampaignError> {
        if self.budget_exhausted() {
            return Ok(Flow::Stop);
        }
        let (hits, exec_us, status) = self.execute(&bytes)?;
        let novelty = self.map.record_execution(&hits)?;
        self.scheduler.observe_execution(&hits);
        let keep = retain_decision(&novelty, self.config.retention);
        let is_new_crash = status == ExecStatus::Crash && !self.crash_paths.contains(&hits);
        if keep || is_new_crash {
            let id = self.fresh_id();
            if is_new_crash {
                self.note_crash(id, &bytes, &hits);
            }
            if keep {
                let label = EdgeLabel::new(kind, self.stats.schedules);
                let node = self.tree.add_seed(selection.seed_node, id, hits.clone(), label)?;
                let entry = CorpusEntry {
                    input: Input { id, bytes },
                    branches: hits,
                    exec_us,
                    n_scheduled: 0,
                    node,
                };
                self.scheduler.on_retained(&entry);
                self.corpus.push(entry);
                self.stats.seeds_retained = self.corpus.len();
                retained.push(id);
            }
        }
        if self.stats.executions % self.config.stats_interval == 0 {
            self.push_row();
        }
        Ok(Flow::Continue)
    }

    /// Selects a seed, fuzzes it for one round and backpropagates.
    pub fn run_schedule(&mut self) -> Result<ScheduleReport, CampaignError> {
        let selection = self.scheduler.select(&self.tree, &self.corpus)?;
        let before = self.stats.executions;
        let mut retained = Vec::new();
        let seed = self
            .corpus
            .get(selection.input)
            .expect("scheduler returns corpus inputs")
            .clone();
        let first_time = seed.n_scheduled == 0;

        'fuzz: {
            if first_time && self.config.deterministic_stage {
                for (op, pos) in mutation::deterministic_ops(seed.input.bytes.len()) {
                    let bytes = mutation::mutate(&seed.input.bytes, op, pos, &mut self.havoc_rng, self.max_len)
                        .expect("deterministic ops are generated in bounds");
                    if let Flow::Stop = self.try_input(bytes, &selection, op.kind_name(), &mut retained)? {
                        break 'fuzz;
                    }
                }
            }
            for _ in 0..self.config.energy {
                let (bytes, kind) = self.havoc_candidate(&seed)?;
                if let Flow::Stop = self.try_input(bytes, &selection, kind, &mut retained)? {
                    break 'fuzz;
                }
            }
        }

        if let Some(entry) = self.corpus.get_mut(selection.input) {
            entry.n_scheduled += 1;
        }
        self.tree.backpropagate(&selection.path)?;
        self.stats.schedules += 1;
        self.stats.total_nodes_examined += selection.nodes_examined;
        Ok(ScheduleReport {
            executions: self.stats.executions - before,
            selection,
            retained,
        })
    }

    fn havoc_candidate(&mut self, seed: &CorpusEntry) -> Result<(Vec<u8>, &'static str), CampaignError> {
        let stack = mutation::havoc_stack_count(&mut self.havoc_rng, self.config.havoc_stack_pow2);
        let n = self.corpus.len();
        if n >= 2 && self.splice_rng.random_bool(self.config.splice_rate) {
            let own = self.corpus.position(seed.id()).expect("seed in corpus");
            let mut other = self.splice_rng.random_range(0..n - 1);
            if other >= own {
                other += 1;
            }
            let donor = &self.corpus.entries()[other].input;
            if let Ok(spliced) = mutation::splice(&seed.input, donor, &mut self.splice_rng) {
                debug_assert_eq!(spliced.parent, seed.id());
                let out = mutation::havoc(&spliced.bytes, &mut self.havoc_rng, stack, self.max_len);
                return Ok((out, MutationOp::Splice.kind_name()));
            }
        }
        let op = MutationOp::Havoc { stack_count: stack };
        let out = mutation::havoc(&seed.input.bytes, &mut self.havoc_rng, stack, self.max_len);
        Ok((out, op.kind_name()))
    }

    /// Runs schedules until the budget is spent.
    pub fn run(mut self) -> Result<CampaignOutcome, CampaignError> {
        while !self.budget_exhausted() {
            self.run_schedule()?;
        }
        Ok(self.finish())
    }

    pub fn finish(mut self) -> CampaignOutcome {
        if self.stats.rows.last().map(|r| r.execs) == Some(self.stats.executions) {
            self.stats.rows.pop();
        }
        self.push_row();
        CampaignOutcome {
            coverage: self.map.covered(),
            stats: self.stats,
            corpus: self.corpus,
            tree: self.tree,
            crash_inputs: self.crash_inputs,
        }
    }
}

/// Runs a whole campaign.
pub fn run_campaign<T: Target>(config: CampaignConfig, target: T, initial: Vec<Vec<u8>>) -> Result<CampaignOutcome, CampaignError> {
    Campaign::new(config, target, initial)?.run()
}
