//! Stats export, scheduler comparison, Mann-Whitney U and SVG plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::campaign::CampaignStats;

/// p-values below this are reported as significant.
pub const SIGNIFICANCE: f64 = 0.05;

/// Largest combined sample size handled by exact enumeration.
pub const EXACT_LIMIT: usize = 20;

pub const STATS_HEADER: &str = "execs,schedules,coverage,seeds,crashes,nodes_examined";
pub const COMPARISON_HEADER: &str = "policy_a,policy_b,target,median_a,median_b,wins_a,wins_b,ties,p_value,first_crash_ratio";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("sample {0} is empty")]
    EmptySample(char),
    #[error("comparison needs at least two policies")]
    TooFewPolicies,
    #[error("policy {policy} has no runs on target {target}")]
    MismatchedTargets { policy: String, target: String },
    #[error("nothing to plot")]
    NoSeries,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn stats_csv(stats: &CampaignStats) -> String {
    let mut out = String::from(STATS_HEADER);
    out.push('\n');
    for r in &stats.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.execs, r.schedules, r.coverage, r.seeds, r.crashes, r.nodes_examined
        );
    }
    out
}

pub fn write_stats_csv(stats: &CampaignStats, path: &Path) -> Result<(), ReportError> {
    fs::write(path, stats_csv(stats)).map_err(io_err(path))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MwMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannWhitney {
    pub u_a: f64,
    pub u_b: f64,
    /// Two-sided.
    pub p_value: f64,
    pub method: MwMethod,
}

// Midranks (1-based) of the pooled sample, first `a` then `b`.
fn midranks(a: &[f64], b: &[f64]) -> Vec<f64> {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pooled[order[j + 1]] == pooled[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn u_statistics(a: &[f64], b: &[f64], ranks: &[f64]) -> (f64, f64) {
    let (n, m) = (a.len() as f64, b.len() as f64);
    let r_a: f64 = ranks[..a.len()].iter().sum();
    let u_a = r_a - n * (n + 1.0) / 2.0;
    (u_a, n * m - u_a)
}

fn check(a: &[f64], b: &[f64]) -> Result<(), ReportError> {
    if a.is_empty() {
        return Err(ReportError::EmptySample('a'));
    }
    if b.is_empty() {
        return Err(ReportError::EmptySample('b'));
    }
    Ok(())
}

/// Exact permutation distribution of U over all ways of drawing `n` of the
/// pooled midranks, counted by (doubled) rank sum.
pub fn mann_whitney_exact(a: &[f64], b: &[f64]) -> Result<MannWhitney, ReportError> {
    check(a, b)?;
    let ranks = midranks(a, b);
    let (u_a, u_b) = u_statistics(a, b, &ranks);
    let n = a.len();
    let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let max_sum: usize = doubled.iter().sum();
    // ways[j][s]: subsets of size j with doubled rank sum s
    let mut ways = vec![vec![0f64; max_sum + 1]; n + 1];
    ways[0][0] = 1.0;
    for &r in &doubled {
        for j in (1..=n).rev() {
            for s in (r..=max_sum).rev() {
                let add = ways[j - 1][s - r];
                if add != 0.0 {
                    ways[j][s] += add;
                }
            }
        }
    }
    let total: f64 = ways[n].iter().sum();
    let nm = (n * b.len()) as f64;
    let mu = nm / 2.0;
    let offset = (n * (n + 1)) as f64 / 2.0;
    let observed = (u_a - mu).abs();
    let extreme: f64 = ways[n]
        .iter()
        .enumerate()
        .filter(|&(s, &w)| w != 0.0 && ((s as f64 / 2.0 - offset) - mu).abs() >= observed - 1e-9)
        .map(|(_, &w)| w)
        .sum();
    Ok(MannWhitney {
        u_a,
        u_b,
        p_value: (extreme / total).min(1.0),
        method: MwMethod::Exact,
    })
}

/// Normal approximation with tie and continuity correction.
pub fn mann_whitney_normal(a: &[f64], b: &[f64]) -> Result<MannWhitney, ReportError> {
    check(a, b)?;
    let ranks = midranks(a, b);
    let (u_a, u_b) = u_statistics(a, b, &ranks);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let total = n + m;
    let mut sorted = ranks.clone();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&r| r == sorted[i]).count();
        let t = j as f64;
        tie_term += t * t * t - t;
        i += j;
    }
    let var = if total > 1.0 {
        n * m / 12.0 * ((total + 1.0) - tie_term / (total * (total - 1.0)))
    } else {
        0.0
    };
    let p_value = if var <= 0.0 {
        1.0
    } else {
        let z = (((u_a - n * m / 2.0).abs() - 0.5).max(0.0)) / var.sqrt();
        let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
        (2.0 * (1.0 - std_normal.cdf(z))).min(1.0)
    };
    Ok(MannWhitney {
        u_a,
        u_b,
        p_value,
        method: MwMethod::Normal,
    })
}

/// Exact when `n + m <= 20`, normal approximation otherwise.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney, ReportError> {
    if a.len() + b.len() <= EXACT_LIMIT {
        mann_whitney_exact(a, b)
    } else {
        mann_whitney_normal(a, b)
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    }
}

/// One finished campaign of a bench batch.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub label: String,
    pub target: String,
    /// Group name used by [`compare_runs`], normally the policy name.
    pub policy: String,
    pub k: f64,
    pub rng_seed: u64,
    pub round: u32,
    pub final_coverage: usize,
    pub time_to_first_crash: Option<u64>,
    pub coverage_series: Vec<(u64, usize)>,
}

/// One policy pair on one target. Win and tie counts pair rounds by index.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonResult {
    pub policy_a: String,
    pub policy_b: String,
    pub target: String,
    pub median_a: f64,
    pub median_b: f64,
    pub wins_a: usize,
    pub wins_b: usize,
    pub ties: usize,
    pub p_value: f64,
    /// Mean time to first crash of `a` divided by that of `b`, over rounds
    /// that crashed.
    pub first_crash_ratio: Option<f64>,
}

/// Per-pair totals across targets, where a target is won by the policy
/// with the higher median final coverage.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSummary {
    pub policy_a: String,
    pub policy_b: String,
    pub targets: usize,
    pub wins_a: usize,
    pub wins_b: usize,
    pub ties: usize,
    pub median_a: f64,
    pub median_b: f64,
    /// Over all pooled final coverages.
    pub p_value: f64,
}

impl PairSummary {
    pub fn win_rate_a(&self) -> f64 {
        if self.targets == 0 {
            0.0
        } else {
            self.wins_a as f64 / self.targets as f64
        }
    }
}

fn mean_first_crash(runs: &[&RunRecord]) -> Option<f64> {
    let times: Vec<f64> = runs.iter().filter_map(|r| r.time_to_first_crash).map(|t| t as f64).collect();
    (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64)
}

/// Compares every pair of policies (in order of first appearance) on every
/// target.
pub fn compare_runs(records: &[RunRecord]) -> Result<Vec<ComparisonResult>, ReportError> {
    let mut policies: Vec<&str> = Vec::new();
    let mut targets: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<(&str, &str), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        if !policies.contains(&r.policy.as_str()) {
            policies.push(&r.policy);
        }
        if !targets.contains(&r.target.as_str()) {
            targets.push(&r.target);
        }
        groups.entry((&r.policy, &r.target)).or_default().push(r);
    }
    if policies.len() < 2 {
        return Err(ReportError::TooFewPolicies);
    }
    for p in &policies {
        for t in &targets {
            if !groups.contains_key(&(*p, *t)) {
                return Err(ReportError::MismatchedTargets {
                    policy: p.to_string(),
                    target: t.to_string(),
                });
            }
        }
    }
    for runs in groups.values_mut() {
        runs.sort_by_key(|r| r.round);
    }

    let mut out = Vec::new();
    for (i, pa) in policies.iter().enumerate() {
        for pb in &policies[i + 1..] {
            for t in &targets {
                let ra = &groups[&(*pa, *t)];
                let rb = &groups[&(*pb, *t)];
                let ca: Vec<f64> = ra.iter().map(|r| r.final_coverage as f64).collect();
                let cb: Vec<f64> = rb.iter().map(|r| r.final_coverage as f64).collect();
                let (mut wins_a, mut wins_b, mut ties) = (0, 0, 0);
                for (x, y) in ca.iter().zip(&cb) {
                    match x.total_cmp(y) {
                        std::cmp::Ordering::Greater => wins_a += 1,
                        std::cmp::Ordering::Less => wins_b += 1,
                        std::cmp::Ordering::Equal => ties += 1,
                    }
                }
                let first_crash_ratio = match (mean_first_crash(ra), mean_first_crash(rb)) {
                    (Some(a), Some(b)) if b > 0.0 => Some(a / b),
                    _ => None,
                };
                out.push(ComparisonResult {
                    policy_a: pa.to_string(),
                    policy_b: pb.to_string(),
                    target: t.to_string(),
                    median_a: median(&ca),
                    median_b: median(&cb),
                    wins_a,
                    wins_b,
                    ties,
                    p_value: mann_whitney_u(&ca, &cb)?.p_value,
                    first_crash_ratio,
                });
            }
        }
    }
    Ok(out)
}

/// Collapses per-target results into one summary per policy pair.
pub fn summarize(results: &[ComparisonResult], records: &[RunRecord]) -> Result<Vec<PairSummary>, ReportError> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    for r in results {
        let key = (r.policy_a.clone(), r.policy_b.clone());
        if !pairs.contains(&key) {
            pairs.push(key);
        }
    }
    let mut out = Vec::new();
    for (pa, pb) in pairs {
        let rows: Vec<&ComparisonResult> = results.iter().filter(|r| r.policy_a == pa && r.policy_b == pb).collect();
        let mut s = PairSummary {
            policy_a: pa.clone(),
            policy_b: pb.clone(),
            targets: rows.len(),
            wins_a: 0,
            wins_b: 0,
            ties: 0,
            median_a: 0.0,
            median_b: 0.0,
            p_value: 1.0,
        };
        for r in &rows {
            match r.median_a.total_cmp(&r.median_b) {
                std::cmp::Ordering::Greater => s.wins_a += 1,
                std::cmp::Ordering::Less => s.wins_b += 1,
                std::cmp::Ordering::Equal => s.ties += 1,
            }
        }
        let pooled = |p: &str| -> Vec<f64> {
            records.iter().filter(|r| r.policy == p).map(|r| r.final_coverage as f64).collect()
        };
        let (ca, cb) = (pooled(&pa), pooled(&pb));
        s.median_a = median(&ca);
        s.median_b = median(&cb);
        s.p_value = mann_whitney_u(&ca, &cb)?.p_value;
        out.push(s);
    }
    Ok(out)
}

fn fmt_num(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x:.6}")
    }
}

/// Comparison table; per-pair summary rows use the target name `ALL`.
pub fn comparison_csv(results: &[ComparisonResult], summaries: &[PairSummary]) -> String {
    let mut out = String::from(COMPARISON_HEADER);
    out.push('\n');
    for r in results {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{:.6},{}",
            r.policy_a,
            r.policy_b,
            r.target,
            fmt_num(r.median_a),
            fmt_num(r.median_b),
            r.wins_a,
            r.wins_b,
            r.ties,
            r.p_value,
            r.first_crash_ratio.map(|x| format!("{x:.6}")).unwrap_or_default()
        );
    }
    for s in summaries {
        let _ = writeln!(
            out,
            "{},{},ALL,{},{},{},{},{},{:.6},",
            s.policy_a,
            s.policy_b,
            fmt_num(s.median_a),
            fmt_num(s.median_b),
            s.wins_a,
            s.wins_b,
            s.ties,
            s.p_value
        );
    }
    out
}

pub fn write_comparison_csv(results: &[ComparisonResult], summaries: &[PairSummary], path: &Path) -> Result<(), ReportError> {
    fs::write(path, comparison_csv(results, summaries)).map_err(io_err(path))
}

/// Pointwise mean of step-function series over the union of their
/// execution indices.
pub fn average_series(series: &[Vec<(u64, usize)>]) -> Vec<(u64, f64)> {
    let mut xs: Vec<u64> = series.iter().flat_map(|s| s.iter().map(|p| p.0)).collect();
    xs.sort_unstable();
    xs.dedup();
    if series.is_empty() {
        return Vec::new();
    }
    xs.into_iter()
        .map(|x| {
            let sum: usize = series
                .iter()
                .map(|s| match s.partition_point(|p| p.0 <= x) {
                    0 => 0,
                    i => s[i - 1].1,
                })
                .sum();
            (x, sum as f64 / series.len() as f64)
        })
        .collect()
}

/// A labelled line for [`coverage_plot_svg`].
#[derive(Debug, Clone, PartialEq)]
pub struct PlotSeries {
    pub label: String,
    pub points: Vec<(u64, f64)>,
}

impl PlotSeries {
    pub fn from_counts(label: impl Into<String>, points: &[(u64, usize)]) -> Self {
        Self {
            label: label.into(),
            points: points.iter().map(|&(x, y)| (x, y as f64)).collect(),
        }
    }
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn coverage_plot_svg(series: &[PlotSeries]) -> Result<String, ReportError> {
    if series.is_empty() {
        return Err(ReportError::NoSeries);
    }
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (60.0, 160.0, 20.0, 50.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let points = series.iter().flat_map(|s| s.points.iter());
    let max_x = points.clone().map(|p| p.0).max().unwrap_or(0).max(1) as f64;
    let max_y = points.map(|p| p.1).fold(0.0, f64::max).max(1.0);
    let sx = |x: u64| left + x as f64 / max_x * pw;
    let sy = |y: f64| top + ph - y / max_y * ph;

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<path d="M{left} {top} V{:.2} H{:.2}" fill="none" stroke="black"/>"#,
        top + ph,
        left + pw
    );
    let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">executions</text>"#, left + pw / 2.0, h - 10.0);
    let _ = writeln!(
        svg,
        r#"<text x="15" y="{:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 15 {:.2})">coverage</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );
    let _ = writeln!(svg, r#"<text x="{left}" y="{:.2}" font-size="10">0</text>"#, top + ph + 14.0);
    let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{}</text>"#, left + pw, top + ph + 14.0, max_x);
    let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{}</text>"#, left - 4.0, top + 10.0, fmt_num(max_y));
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(svg, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        let ly = top + 14.0 + i as f64 * 18.0;
        let lx = left + pw + 12.0;
        let _ = writeln!(svg, r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" font-size="11">{}</text>"#, lx + 26.0, ly + 4.0, xml_escape(&s.label));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn emit_coverage_plot(series: &[PlotSeries], path: &Path) -> Result<(), ReportError> {
    let svg = coverage_plot_svg(series)?;
    fs::write(path, svg).map_err(io_err(path))
}
