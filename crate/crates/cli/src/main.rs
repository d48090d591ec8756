use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, CommandFactory, Parser, Subcommand};

use treefuzz::bench::{run_bench, sweep_csv, sweep_k, BenchTarget};
use treefuzz::campaign::{parse_kv, CampaignConfig, CampaignError};
use treefuzz::report::{
    average_series, compare_runs, comparison_csv, emit_coverage_plot, summarize, PlotSeries,
};
use treefuzz::scheduler::SWEEP_K_VALUES;
use treefuzz::seed_tree::SeedMutationTree;
use treefuzz::target::{generate_program, ExternalTarget, GenParams, SyntheticProgram, SyntheticTarget, Target};
use treefuzz::{run_campaign, Policy};

#[derive(Parser)]
#[command(name = "treefuzz", version, about = "Greybox fuzzer with tree-structured seed scheduling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one campaign.
    Fuzz(FuzzArgs),
    /// Run rounds x policies x targets campaigns and compare policies.
    Bench(BenchArgs),
    /// Run tree-scheduled campaigns for several exploration constants.
    SweepK(SweepArgs),
    /// Write seeded synthetic programs.
    GenCorpus(GenArgs),
    /// Execute one input and print the result.
    Replay(ReplayArgs),
    /// Print the seed tree of a finished campaign.
    DumpTree(DumpArgs),
}

/// Campaign settings shared by fuzz, bench and sweep-k. Unset flags fall
/// back to the --config file, then to defaults.
#[derive(Args, Default)]
struct CampaignFlags {
    /// key=value file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    rng_seed: Option<u64>,
    #[arg(long)]
    energy: Option<u32>,
    #[arg(long, conflicts_with = "budget_secs")]
    budget_execs: Option<u64>,
    #[arg(long)]
    budget_secs: Option<f64>,
    #[arg(long)]
    map_size: Option<usize>,
    #[arg(long)]
    max_input_len: Option<usize>,
    /// new-branch or new-bucket
    #[arg(long)]
    retention: Option<String>,
}

#[derive(Args)]
struct FuzzArgs {
    /// Synthetic program JSON file, or a command template containing @@
    #[arg(long)]
    target: Option<String>,
    /// Directory of initial inputs
    #[arg(long)]
    seeds: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    policy: Option<String>,
    #[arg(long)]
    k: Option<f64>,
    /// Per-execution timeout for command targets
    #[arg(long, default_value_t = 1000)]
    timeout_ms: u64,
    #[command(flatten)]
    campaign: CampaignFlags,
}

#[derive(Args)]
struct BenchArgs {
    /// Directory of synthetic program JSON files
    #[arg(long)]
    targets: PathBuf,
    /// Comma-separated policy names
    #[arg(long, default_value = "mcts,fifo", value_delimiter = ',')]
    policies: Vec<String>,
    #[arg(long, default_value_t = 10)]
    rounds: u32,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    k: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    campaign: CampaignFlags,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    targets: PathBuf,
    #[arg(long, value_delimiter = ',')]
    k_values: Option<Vec<f64>>,
    #[arg(long, default_value_t = 10)]
    rounds: u32,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Also write sweep.csv and runs.csv here
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    campaign: CampaignFlags,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    count: u32,
    #[arg(long, default_value_t = 0)]
    gen_seed: u64,
    #[arg(long, default_value_t = 8)]
    depth: u32,
    #[arg(long, default_value_t = 2)]
    fanout: u32,
    #[arg(long, default_value_t = 0.5)]
    magic_byte_fraction: f64,
    #[arg(long, default_value_t = 0.05)]
    crash_fraction: f64,
    #[arg(long, default_value_t = 8)]
    max_input_len: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    target: String,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = treefuzz::coverage::DEFAULT_MAP_SIZE)]
    map_size: usize,
    #[arg(long, default_value_t = 1000)]
    timeout_ms: u64,
}

#[derive(Args)]
struct DumpArgs {
    /// Output directory of a previous fuzz run
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<CampaignError> for CliError {
    fn from(e: CampaignError) -> Self {
        match e {
            CampaignError::Config(_) | CampaignError::NoInitialInputs | CampaignError::Scheduler(_) => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

type CliResult<T> = Result<T, CliError>;

/// Builds a config from an optional file plus flags. Returns the file's
/// non-campaign keys so the caller can consume them.
fn build_config(
    flags: &CampaignFlags,
    policy: Option<&str>,
    k: Option<f64>,
    extra_keys: &[&str],
) -> CliResult<(CampaignConfig, Vec<(String, String)>)> {
    let mut config = CampaignConfig::default();
    let mut extra = Vec::new();
    if let Some(path) = &flags.config {
        let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        for (key, value) in parse_kv(&text)? {
            if !config.apply(&key, &value)? {
                if extra_keys.contains(&key.as_str()) {
                    extra.push((key, value));
                } else {
                    return Err(usage(format!("{}: unknown key {key:?}", path.display())));
                }
            }
        }
    }
    let mut set = |key: &str, value: Option<String>| -> CliResult<()> {
        if let Some(v) = value {
            config.apply(key, &v)?;
        }
        Ok(())
    };
    set("rng-seed", flags.rng_seed.map(|v| v.to_string()))?;
    set("energy", flags.energy.map(|v| v.to_string()))?;
    set("budget-execs", flags.budget_execs.map(|v| v.to_string()))?;
    set("budget-secs", flags.budget_secs.map(|v| v.to_string()))?;
    set("map-size", flags.map_size.map(|v| v.to_string()))?;
    set("max-input-len", flags.max_input_len.map(|v| v.to_string()))?;
    set("retention", flags.retention.clone())?;
    set("policy", policy.map(str::to_string))?;
    set("k", k.map(|v| v.to_string()))?;
    config.validate()?;
    Ok((config, extra))
}

fn read_seeds(dir: &Path) -> CliResult<Vec<Vec<u8>>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| usage(format!("seeds {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(usage(format!("seeds {}: no input files", dir.display())));
    }
    paths
        .iter()
        .map(|p| fs::read(p).map_err(|e| usage(format!("{}: {e}", p.display()))))
        .collect()
}

enum AnyTarget {
    Synthetic(SyntheticTarget),
    External(ExternalTarget),
}

fn open_target(spec: &str, map_size: usize, timeout: Duration) -> CliResult<AnyTarget> {
    let path = Path::new(spec);
    if path.is_file() {
        let program = SyntheticProgram::load(path).map_err(|e| usage(format!("target {spec}: {e}")))?;
        return SyntheticTarget::new(program, map_size)
            .map(AnyTarget::Synthetic)
            .map_err(|e| usage(format!("target {spec}: {e}")));
    }
    if spec.contains("@@") {
        return ExternalTarget::new(spec, timeout, map_size)
            .map(AnyTarget::External)
            .map_err(|e| usage(format!("target {spec:?}: {e}")));
    }
    Err(usage(format!(
        "target {spec:?} is neither a program file nor a command containing @@"
    )))
}

fn cmd_fuzz(args: FuzzArgs) -> CliResult<()> {
    let (config, extra) = build_config(&args.campaign, args.policy.as_deref(), args.k, &["target", "seeds"])?;
    let from_file = |key: &str| extra.iter().find(|(k, _)| k == key).map(|(_, v)| v.clone());
    let target = args
        .target
        .or_else(|| from_file("target"))
        .ok_or_else(|| usage("missing --target"))?;
    let seeds = args
        .seeds
        .or_else(|| from_file("seeds").map(PathBuf::from))
        .ok_or_else(|| usage("missing --seeds"))?;
    let initial = read_seeds(&seeds)?;
    let target = open_target(&target, config.map_size, Duration::from_millis(args.timeout_ms))?;
    let outcome = match &target {
        AnyTarget::Synthetic(t) => run_campaign(config.clone(), t, initial)?,
        AnyTarget::External(t) => run_campaign(config.clone(), t, initial)?,
    };
    outcome.write_dir(&args.out, &config).map_err(runtime)?;
    let s = &outcome.stats;
    println!(
        "executions={} schedules={} coverage={} seeds={} crashes={}",
        s.executions,
        s.schedules,
        s.final_coverage(),
        outcome.corpus.len(),
        s.crashes.len()
    );
    Ok(())
}

fn load_bench_targets(dir: &Path, config: &CampaignConfig) -> CliResult<Vec<BenchTarget<SyntheticTarget>>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| usage(format!("targets {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(usage(format!("targets {}: no .json programs", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let program = SyntheticProgram::load(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            let len = program.max_input_len.min(config.max_input_len);
            let target = SyntheticTarget::new(program, config.map_size).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            Ok(BenchTarget {
                name: p.file_stem().unwrap_or_default().to_string_lossy().into_owned(),
                target,
                initial: vec![vec![0; len]],
            })
        })
        .collect()
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn cmd_bench(args: BenchArgs) -> CliResult<()> {
    let (config, _) = build_config(&args.campaign, None, args.k, &[])?;
    let policies: Vec<Policy> = args
        .policies
        .iter()
        .map(|p| p.parse::<Policy>().map_err(usage))
        .collect::<CliResult<_>>()?;
    if policies.len() < 2 {
        return Err(usage("bench needs at least two policies"));
    }
    let targets = load_bench_targets(&args.targets, &config)?;
    let records = run_bench(&targets, &policies, args.rounds, &config, args.jobs).map_err(runtime)?;
    let results = compare_runs(&records).map_err(runtime)?;
    let summaries = summarize(&results, &records).map_err(runtime)?;

    let plots = args.out.join("plots");
    fs::create_dir_all(&plots).map_err(|e| runtime(format!("{}: {e}", plots.display())))?;
    write_file(&args.out.join("comparison.csv"), &comparison_csv(&results, &summaries))?;
    let mut runs = String::from("label,target,policy,k,rng_seed,round,final_coverage,time_to_first_crash\n");
    for r in &records {
        runs.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.label,
            r.target,
            r.policy,
            r.k,
            r.rng_seed,
            r.round,
            r.final_coverage,
            r.time_to_first_crash.map(|t| t.to_string()).unwrap_or_default()
        ));
    }
    write_file(&args.out.join("runs.csv"), &runs)?;
    for t in &targets {
        let series: Vec<PlotSeries> = policies
            .iter()
            .map(|p| {
                let rounds: Vec<Vec<(u64, usize)>> = records
                    .iter()
                    .filter(|r| r.target == t.name && r.policy == p.name())
                    .map(|r| r.coverage_series.clone())
                    .collect();
                PlotSeries {
                    label: p.name().to_string(),
                    points: average_series(&rounds),
                }
            })
            .collect();
        emit_coverage_plot(&series, &plots.join(format!("{}.svg", t.name))).map_err(runtime)?;
    }
    for s in &summaries {
        println!(
            "{} vs {}: targets={} wins={} losses={} ties={} median {} vs {} p={:.4}",
            s.policy_a, s.policy_b, s.targets, s.wins_a, s.wins_b, s.ties, s.median_a, s.median_b, s.p_value
        );
    }
    Ok(())
}

fn cmd_sweep_k(args: SweepArgs) -> CliResult<()> {
    let (config, _) = build_config(&args.campaign, None, None, &[])?;
    let ks = args.k_values.unwrap_or_else(|| SWEEP_K_VALUES.to_vec());
    if ks.iter().any(|k| !k.is_finite() || *k < 0.0) {
        return Err(usage("k values must be non-negative"));
    }
    let targets = load_bench_targets(&args.targets, &config)?;
    let (rows, records) = sweep_k(&targets, &ks, args.rounds, &config, args.jobs).map_err(runtime)?;
    let table = sweep_csv(&rows);
    print!("{table}");
    if let Some(out) = args.out {
        fs::create_dir_all(&out).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
        write_file(&out.join("sweep.csv"), &table)?;
        let mut runs = String::from("k,target,round,final_coverage\n");
        for r in &records {
            runs.push_str(&format!("{},{},{},{}\n", r.k, r.target, r.round, r.final_coverage));
        }
        write_file(&out.join("runs.csv"), &runs)?;
    }
    Ok(())
}

fn cmd_gen_corpus(args: GenArgs) -> CliResult<()> {
    let params = GenParams {
        depth: args.depth,
        fanout: args.fanout,
        magic_byte_fraction: args.magic_byte_fraction,
        crash_fraction: args.crash_fraction,
        max_input_len: args.max_input_len,
    };
    params.validate().map_err(usage)?;
    fs::create_dir_all(&args.out).map_err(|e| runtime(format!("{}: {e}", args.out.display())))?;
    for i in 0..args.count {
        let seed = args.gen_seed.wrapping_add(i as u64);
        let program = generate_program(seed, &params).map_err(usage)?;
        let path = args.out.join(format!("prog_{i:03}.json"));
        program.save(&path).map_err(runtime)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn cmd_replay(args: ReplayArgs) -> CliResult<()> {
    let input = fs::read(&args.input).map_err(|e| usage(format!("{}: {e}", args.input.display())))?;
    let target = open_target(&args.target, args.map_size, Duration::from_millis(args.timeout_ms))?;
    let result = match &target {
        AnyTarget::Synthetic(t) => t.execute(&input),
        AnyTarget::External(t) => t.execute(&input),
    }
    .map_err(runtime)?;
    println!("status={} duration_us={} branches={}", result.status, result.duration_us, result.hits.len());
    let text = result.hits.to_text();
    if !text.is_empty() {
        println!("{text}");
    }
    Ok(())
}

fn cmd_dump_tree(args: DumpArgs) -> CliResult<()> {
    let path = if args.out.is_dir() { args.out.join("tree.json") } else { args.out.clone() };
    let text = fs::read_to_string(&path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let tree = SeedMutationTree::from_json(&text).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    print!("{}", tree.outline());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = match &cli.command {
        Command::Fuzz(_) => "fuzz",
        Command::Bench(_) => "bench",
        Command::SweepK(_) => "sweep-k",
        Command::GenCorpus(_) => "gen-corpus",
        Command::Replay(_) => "replay",
        Command::DumpTree(_) => "dump-tree",
    };
    let result = match cli.command {
        Command::Fuzz(a) => cmd_fuzz(a),
        Command::Bench(a) => cmd_bench(a),
        Command::SweepK(a) => cmd_sweep_k(a),
        Command::GenCorpus(a) => cmd_gen_corpus(a),
        Command::Replay(a) => cmd_replay(a),
        Command::DumpTree(a) => cmd_dump_tree(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            let mut cmd = Cli::command();
            let usage = cmd
                .find_subcommand_mut(name)
                .map(|c| c.render_usage().to_string())
                .unwrap_or_default();
            eprintln!("error: {msg}\n\n{usage}\n\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
