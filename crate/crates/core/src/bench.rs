//! Batches of campaigns over many targets, run on a worker pool.
//!
//! Results come back in (target, policy, round) order whatever the number
//! of workers.

use rayon::prelude::*;
use thiserror::Error;

use crate::campaign::{run_campaign, CampaignConfig, CampaignError};
use crate::report::{median, RunRecord};
use crate::scheduler::Policy;
use crate::target::Target;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("jobs must be at least 1")]
    NoWorkers,
    #[error("rounds must be at least 1")]
    NoRounds,
    #[error("thread pool: {0}")]
    Pool(String),
    #[error("{label}: {source}")]
    Campaign {
        label: String,
        #[source]
        source: CampaignError,
    },
}

/// A named target plus the initial inputs its campaigns start from.
#[derive(Debug, Clone)]
pub struct BenchTarget<T> {
    pub name: String,
    pub target: T,
    pub initial: Vec<Vec<u8>>,
}

/// Seed of round `round`; shared by every policy so rounds pair up.
pub fn round_seed(base: u64, round: u32) -> u64 {
    base.wrapping_add(round as u64)
}

#[derive(Debug, Clone, Copy)]
struct Job {
    target: usize,
    policy: Policy,
    k: f64,
    round: u32,
}

fn run_jobs<T: Target + Sync>(
    targets: &[BenchTarget<T>],
    jobs_list: &[Job],
    base: &CampaignConfig,
    jobs: usize,
) -> Result<Vec<RunRecord>, BenchError> {
    if jobs == 0 {
        return Err(BenchError::NoWorkers);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| BenchError::Pool(e.to_string()))?;
    pool.install(|| {
        jobs_list
            .par_iter()
            .map(|job| {
                let t = &targets[job.target];
                let config = CampaignConfig {
                    policy: job.policy,
                    k: job.k,
                    rng_seed: round_seed(base.rng_seed, job.round),
                    ..base.clone()
                };
                let label = format!("{}/{}/k{}/r{}", t.name, job.policy, job.k, job.round);
                let outcome = run_campaign(config.clone(), &t.target, t.initial.clone())
                    .map_err(|source| BenchError::Campaign { label: label.clone(), source })?;
                Ok(RunRecord {
                    label,
                    target: t.name.clone(),
                    policy: job.policy.name().to_string(),
                    k: job.k,
                    rng_seed: config.rng_seed,
                    round: job.round,
                    final_coverage: outcome.stats.final_coverage(),
                    time_to_first_crash: outcome.stats.time_to_first_crash,
                    coverage_series: outcome.stats.coverage_series(),
                })
            })
            .collect()
    })
}

/// Runs `rounds` campaigns per (target, policy). Every campaign takes its
/// settings from `base` apart from policy and seed.
pub fn run_bench<T: Target + Sync>(
    targets: &[BenchTarget<T>],
    policies: &[Policy],
    rounds: u32,
    base: &CampaignConfig,
    jobs: usize,
) -> Result<Vec<RunRecord>, BenchError> {
    if rounds == 0 {
        return Err(BenchError::NoRounds);
    }
    let mut list = Vec::new();
    for target in 0..targets.len() {
        for &policy in policies {
            for round in 0..rounds {
                list.push(Job {
                    target,
                    policy,
                    k: base.k,
                    round,
                });
            }
        }
    }
    run_jobs(targets, &list, base, jobs)
}

/// Averaged outcome of one k value.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub k: f64,
    pub mean_coverage: f64,
    pub median_coverage: f64,
    pub runs: usize,
}

/// Runs tree-scheduled campaigns for every k and returns the raw records
/// (in k, target, round order) with one averaged row per k.
pub fn sweep_k<T: Target + Sync>(
    targets: &[BenchTarget<T>],
    k_values: &[f64],
    rounds: u32,
    base: &CampaignConfig,
    jobs: usize,
) -> Result<(Vec<SweepRow>, Vec<RunRecord>), BenchError> {
    if rounds == 0 {
        return Err(BenchError::NoRounds);
    }
    let mut list = Vec::new();
    for &k in k_values {
        for target in 0..targets.len() {
            for round in 0..rounds {
                list.push(Job {
                    target,
                    policy: Policy::Mcts,
                    k,
                    round,
                });
            }
        }
    }
    let records = run_jobs(targets, &list, base, jobs)?;
    let per_k = targets.len() * rounds as usize;
    let rows = k_values
        .iter()
        .zip(records.chunks(per_k.max(1)))
        .map(|(&k, chunk)| {
            let cov: Vec<f64> = chunk.iter().map(|r| r.final_coverage as f64).collect();
            SweepRow {
                k,
                mean_coverage: if cov.is_empty() { 0.0 } else { cov.iter().sum::<f64>() / cov.len() as f64 },
                median_coverage: median(&cov),
                runs: cov.len(),
            }
        })
        .collect();
    Ok((rows, records))
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("k,mean_coverage,median_coverage,runs\n");
    for r in rows {
        out.push_str(&format!("{},{:.3},{:.1},{}\n", r.k, r.mean_coverage, r.median_coverage, r.runs));
    }
    out
}
