//! Oracles and fixtures shared by the integration tests. Nothing here calls
//! into the scheduler or the synthetic executor it checks.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use treefuzz::bench::BenchTarget;
use treefuzz::seed_tree::{NodeKind, SeedId, SeedMutationTree};
use treefuzz::target::{generate_program, BlockKind, Condition, GenParams, SyntheticProgram, SyntheticTarget, Target};

/// Programs of the pinned bench corpus: nested three-way tests, mostly
/// single-byte equality checks.
pub const BENCH_PARAMS: GenParams = GenParams {
    depth: 6,
    fanout: 3,
    magic_byte_fraction: 0.8,
    crash_fraction: 0.05,
    max_input_len: 8,
};
pub const BENCH_FIRST_SEED: u64 = 1000;
pub const BENCH_PROGRAMS: u64 = 50;

pub fn edge(prev: u32, cur: u32, map_size: usize) -> u32 {
    ((prev >> 1) ^ cur) & (map_size as u32 - 1)
}

pub fn bench_target(gen_seed: u64, params: &GenParams) -> BenchTarget<SyntheticTarget> {
    let program = generate_program(gen_seed, params).unwrap();
    BenchTarget {
        name: format!("prog_{gen_seed}"),
        initial: vec![vec![0; params.max_input_len]],
        target: SyntheticTarget::new(program, 1 << 16).unwrap(),
    }
}

pub fn bench_corpus() -> Vec<BenchTarget<SyntheticTarget>> {
    (0..BENCH_PROGRAMS)
        .map(|i| bench_target(BENCH_FIRST_SEED + i, &BENCH_PARAMS))
        .collect()
}

type ByteSet = [bool; 256];

/// Every hashed edge some input can take, found by walking the control
/// graph while narrowing the feasible values of each input byte.
pub fn reachable_edges(program: &SyntheticProgram, map_size: usize) -> BTreeSet<u32> {
    let blocks: HashMap<u32, &treefuzz::target::Block> = program.nodes.iter().map(|b| (b.id, b)).collect();
    let mut out = BTreeSet::new();
    let start = vec![[true; 256]; program.max_input_len];
    let mut stack = vec![(program.entry, start)];
    while let Some((id, domain)) = stack.pop() {
        let block = blocks[&id];
        if block.crash {
            continue;
        }
        match &block.kind {
            BlockKind::Exit => {}
            BlockKind::Jump { to } => {
                out.insert(edge(id, *to, map_size));
                stack.push((*to, domain));
            }
            BlockKind::Branch { cond, on_true, on_false } => {
                let (offset, test): (usize, Box<dyn Fn(u8) -> bool>) = match *cond {
                    Condition::ByteEq { offset, value } => (offset, Box::new(move |b| b == value)),
                    Condition::ByteLt { offset, value } => (offset, Box::new(move |b| b < value)),
                };
                for (succ, want) in [(*on_true, true), (*on_false, false)] {
                    let mut narrowed: ByteSet = domain[offset];
                    for (v, allowed) in narrowed.iter_mut().enumerate() {
                        *allowed = *allowed && test(v as u8) == want;
                    }
                    if narrowed.iter().any(|&a| a) {
                        let mut next = domain.clone();
                        next[offset] = narrowed;
                        out.insert(edge(id, succ, map_size));
                        stack.push((succ, next));
                    }
                }
            }
        }
    }
    out
}

/// Union of hits over every input of exactly `len` bytes.
pub fn exhaustive_edges<T: Target>(target: &T, len: usize) -> BTreeSet<u32> {
    assert!(len <= 2);
    let mut out = BTreeSet::new();
    let total = 1usize << (8 * len);
    for v in 0..total {
        let input: Vec<u8> = (0..len).map(|i| (v >> (8 * i)) as u8).collect();
        for id in target.execute(&input).unwrap().hits.iter() {
            out.insert(id.0);
        }
    }
    out
}

fn own_set(tree: &SeedMutationTree, id: SeedId) -> BTreeSet<u32> {
    tree.node(id).unwrap().own_branches.iter().map(|b| b.0).collect()
}

/// Union of raw own sets over the subtree of `id`.
pub fn brute_subtree(tree: &SeedMutationTree, id: SeedId) -> BTreeSet<u32> {
    let mut out = own_set(tree, id);
    for &c in &tree.node(id).unwrap().children {
        out.extend(brute_subtree(tree, c));
    }
    out
}

/// The child a UCT step from `anchor` must pick: any unvisited child
/// first (smallest id), else the highest score, ties to the smallest id.
pub fn brute_choice(tree: &SeedMutationTree, anchor: SeedId, k: f64) -> SeedId {
    let node = tree.node(anchor).unwrap();
    let parent_n = node.n_scheduled as f64;
    let sets: Vec<(SeedId, BTreeSet<u32>, u64)> = node
        .children
        .iter()
        .map(|&c| (c, brute_subtree(tree, c), tree.node(c).unwrap().n_scheduled))
        .collect();
    let mut best: Option<(SeedId, f64)> = None;
    for (i, (id, set, n)) in sets.iter().enumerate() {
        let score = if *n == 0 {
            f64::INFINITY
        } else {
            let unique = set
                .iter()
                .filter(|b| sets.iter().enumerate().all(|(j, o)| j == i || !o.1.contains(b)))
                .count() as f64;
            let n = *n as f64;
            unique / n + k * (parent_n.max(1.0).ln() / n).sqrt()
        };
        best = match best {
            None => Some((*id, score)),
            Some((bid, bs)) if score > bs || (score == bs && *id < bid) => Some((*id, score)),
            keep => keep,
        };
    }
    best.unwrap().0
}

/// Structural checks over the public node view; returns one message per
/// violation.
pub fn tree_violations(tree: &SeedMutationTree, schedules: u64, corpus: &treefuzz::corpus::Corpus) -> Vec<String> {
    let mut bad = Vec::new();
    let root = tree.node(tree.root()).unwrap();
    if root.n_scheduled != schedules {
        bad.push(format!("root n {} != schedules {schedules}", root.n_scheduled));
    }
    let mut seen_inputs = BTreeSet::new();
    for node in tree.nodes() {
        let variants = node
            .children
            .iter()
            .filter(|&&c| tree.node(c).unwrap().kind == NodeKind::Variant)
            .count();
        match node.kind {
            NodeKind::Variant => {
                if !node.children.is_empty() {
                    bad.push(format!("variant {} has children", node.id.0));
                }
            }
            NodeKind::Seed => {
                let expected = usize::from(!node.children.is_empty());
                if variants != expected {
                    bad.push(format!("seed {} has {variants} variants", node.id.0));
                }
                let input = node.input_ref.unwrap();
                if !seen_inputs.insert(input) {
                    bad.push(format!("input {} on two seeds", input.0));
                }
                match corpus.get(input) {
                    Some(e) if e.node == node.id => {}
                    _ => bad.push(format!("seed {} not mirrored in corpus", node.id.0)),
                }
            }
            NodeKind::Root => {
                if variants != 0 {
                    bad.push("root has a variant".into());
                }
            }
        }
        let cached: BTreeSet<u32> = node.subtree_branches.iter().map(|b| b.0).collect();
        if cached != brute_subtree(tree, node.id) {
            bad.push(format!("node {} subtree union stale", node.id.0));
        }
        if node.kind != NodeKind::Variant && !node.children.is_empty() {
            let sum: u64 = node.children.iter().map(|&c| tree.node(c).unwrap().n_scheduled).sum();
            if sum != node.n_scheduled {
                bad.push(format!("node {} n {} != children sum {sum}", node.id.0, node.n_scheduled));
            }
        }
    }
    if seen_inputs.len() != corpus.len() {
        bad.push(format!("{} seeds vs {} corpus entries", seen_inputs.len(), corpus.len()));
    }
    bad
}
