//! The seed mutation tree: retained seeds linked by "mutated from" edges
//! under an auxiliary root, with a variant leaf standing in for each
//! internal seed as itself.

use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coverage::{BranchId, BranchSet};
use crate::target::InputId;

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("a tree needs at least one initial seed")]
    NoInitialSeeds,
    #[error("unknown node {0}")]
    UnknownNode(SeedId),
    #[error("node {0} is a variant and cannot have children")]
    VariantParent(SeedId),
    #[error("malformed tree document at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("inconsistent tree: {0}")]
    Inconsistent(String),
    #[error("descent path is not a root-to-leaf path of this tree")]
    BadPath,
}

/// Identifier of a tree node; node ids double as indices into the arena.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SeedId(pub u64);

impl SeedId {
    pub const ROOT: SeedId = SeedId(0);

    fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for SeedId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Root,
    Seed,
    Variant,
}

/// Label of a tree edge: the mutation that produced the child and the
/// schedule it happened in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeLabel {
    pub mutation_kind: String,
    pub creating_iteration: u64,
}

impl EdgeLabel {
    pub fn new(mutation_kind: impl Into<String>, creating_iteration: u64) -> Self {
        Self {
            mutation_kind: mutation_kind.into(),
            creating_iteration,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedNode {
    pub id: SeedId,
    pub kind: NodeKind,
    pub parent: Option<SeedId>,
    pub children: Vec<SeedId>,
    pub input_ref: Option<InputId>,
    pub own_branches: BranchSet,
    pub subtree_branches: BranchSet,
    pub n_scheduled: u64,
    pub edge_label: Option<EdgeLabel>,
}

impl SeedNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedMutationTree {
    root: SeedId,
    nodes: Vec<SeedNode>,
}

impl SeedMutationTree {
    /// Root plus one child per initial seed.
    pub fn new(initial: Vec<(InputId, BranchSet)>) -> Result<Self, TreeError> {
        if initial.is_empty() {
            return Err(TreeError::NoInitialSeeds);
        }
        let mut tree = Self {
            root: SeedId::ROOT,
            nodes: vec![SeedNode {
                id: SeedId::ROOT,
                kind: NodeKind::Root,
                parent: None,
                children: Vec::new(),
                input_ref: None,
                own_branches: BranchSet::new(),
                subtree_branches: BranchSet::new(),
                n_scheduled: 0,
                edge_label: None,
            }],
        };
        for (input, branches) in initial {
            tree.push_child(SeedId::ROOT, NodeKind::Seed, input, branches, None);
        }
        Ok(tree)
    }

    pub fn root(&self) -> SeedId {
        self.root
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: SeedId) -> Result<&SeedNode, TreeError> {
        self.nodes.get(id.index()).ok_or(TreeError::UnknownNode(id))
    }

    pub fn nodes(&self) -> impl Iterator<Item = &SeedNode> {
        self.nodes.iter()
    }

    pub fn seed_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Seed).count()
    }

    /// The variant child of an internal seed, if it has one.
    pub fn variant_of(&self, id: SeedId) -> Option<SeedId> {
        let node = self.nodes.get(id.index())?;
        node.children
            .iter()
            .copied()
            .find(|c| self.nodes[c.index()].kind == NodeKind::Variant)
    }

    /// Maximum number of children of any node.
    pub fn max_branching(&self) -> usize {
        self.nodes.iter().map(|n| n.children.len()).max().unwrap_or(0)
    }

    /// Number of edges on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        let mut depth = vec![0usize; self.nodes.len()];
        // parents always have smaller ids than their children
        for node in &self.nodes[1..] {
            depth[node.id.index()] = depth[node.parent.expect("non-root has parent").index()] + 1;
        }
        depth.into_iter().max().unwrap_or(0)
    }

    fn push_child(
        &mut self,
        parent: SeedId,
        kind: NodeKind,
        input: InputId,
        branches: BranchSet,
        label: Option<EdgeLabel>,
    ) -> SeedId {
        let id = SeedId(self.nodes.len() as u64);
        self.nodes.push(SeedNode {
            id,
            kind,
            parent: Some(parent),
            children: Vec::new(),
            input_ref: Some(input),
            subtree_branches: branches.clone(),
            own_branches: branches,
            n_scheduled: 0,
            edge_label: label,
        });
        self.nodes[parent.index()].children.push(id);
        self.propagate_branches(parent, id);
        id
    }

    // Inserts the subtree set of `from` into every ancestor starting at `at`.
    // An ancestor's union contains its descendants' unions, so a branch
    // already present at one level is present above it too.
    fn propagate_branches(&mut self, at: SeedId, from: SeedId) {
        let mut delta: Vec<BranchId> = self.nodes[from.index()].subtree_branches.iter().collect();
        let mut cur = Some(at);
        while let Some(id) = cur {
            let node = &mut self.nodes[id.index()];
            delta.retain(|&b| node.subtree_branches.insert(b));
            if delta.is_empty() {
                break;
            }
            cur = node.parent;
        }
    }

    /// Adds a retained input as a child of `parent`. A seed gaining its first
    /// child first receives a variant, which inherits the seed's schedule
    /// count so that counts stay conserved.
    pub fn add_seed(
        &mut self,
        parent: SeedId,
        input: InputId,
        branches: BranchSet,
        label: EdgeLabel,
    ) -> Result<SeedId, TreeError> {
        let node = self.node(parent)?;
        match node.kind {
            NodeKind::Variant => return Err(TreeError::VariantParent(parent)),
            NodeKind::Seed if node.is_leaf() => {
                let own = node.own_branches.clone();
                let inherited = node.n_scheduled;
                let input_ref = node.input_ref.expect("seed nodes carry an input");
                let variant = self.push_child(parent, NodeKind::Variant, input_ref, own, None);
                self.nodes[variant.index()].n_scheduled = inherited;
            }
            _ => {}
        }
        Ok(self.push_child(parent, NodeKind::Seed, input, branches, Some(label)))
    }

    pub fn subtree_union(&self, id: SeedId) -> Result<&BranchSet, TreeError> {
        Ok(&self.node(id)?.subtree_branches)
    }

    /// Fresh recursive union of own branch sets under `id`.
    pub fn recompute_subtree_union(&self, id: SeedId) -> Result<BranchSet, TreeError> {
        let node = self.node(id)?;
        let mut acc = node.own_branches.clone();
        for &child in &node.children {
            acc.union_with(&self.recompute_subtree_union(child)?);
        }
        Ok(acc)
    }

    /// Adds one schedule to every node of `path`, a root-to-leaf descent.
    /// If the leaf has since become internal, the schedule is charged to its
    /// variant as well.
    pub fn backpropagate(&mut self, path: &[SeedId]) -> Result<(), TreeError> {
        if path.first() != Some(&self.root) {
            return Err(TreeError::BadPath);
        }
        for pair in path.windows(2) {
            let parent = self.nodes.get(pair[1].index()).and_then(|n| n.parent);
            if parent != Some(pair[0]) {
                return Err(TreeError::BadPath);
            }
        }
        let last = *path.last().expect("non-empty");
        let extra = match self.nodes[last.index()].kind {
            NodeKind::Seed if !self.nodes[last.index()].is_leaf() => self.variant_of(last),
            NodeKind::Root => return Err(TreeError::BadPath),
            _ => None,
        };
        for id in path.iter().copied().chain(extra) {
            self.nodes[id.index()].n_scheduled += 1;
        }
        Ok(())
    }

    /// Root-to-node path of ids.
    pub fn path_to(&self, id: SeedId) -> Result<Vec<SeedId>, TreeError> {
        let mut path = vec![id];
        let mut cur = self.node(id)?.parent;
        while let Some(p) = cur {
            path.push(p);
            cur = self.nodes[p.index()].parent;
        }
        path.reverse();
        Ok(path)
    }

    /// All structural invariants; returns a description of each violation.
    pub fn check_invariants(&self) -> Vec<String> {
        let mut errors = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if node.id.index() != i {
                errors.push(format!("node at index {i} has id {}", node.id));
                continue;
            }
            match node.kind {
                NodeKind::Root => {
                    if node.parent.is_some() || node.input_ref.is_some() || !node.own_branches.is_empty() {
                        errors.push(format!("root {} carries a parent, input or branches", node.id));
                    }
                }
                NodeKind::Variant => {
                    if !node.is_leaf() {
                        errors.push(format!("variant {} has children", node.id));
                    }
                    if let Some(p) = node.parent.and_then(|p| self.nodes.get(p.index())) {
                        if p.kind != NodeKind::Seed || p.input_ref != node.input_ref || p.own_branches != node.own_branches {
                            errors.push(format!("variant {} does not mirror its seed {}", node.id, p.id));
                        }
                    }
                }
                NodeKind::Seed => {
                    let variants = node
                        .children
                        .iter()
                        .filter(|c| self.nodes.get(c.index()).map(|n| n.kind) == Some(NodeKind::Variant))
                        .count();
                    let expected = usize::from(!node.is_leaf());
                    if variants != expected {
                        errors.push(format!("seed {} has {variants} variants, expected {expected}", node.id));
                    }
                }
            }
            if node.kind != NodeKind::Root && node.parent.is_none() {
                errors.push(format!("node {} has no parent", node.id));
            }
            if let Some(p) = node.parent {
                match self.nodes.get(p.index()) {
                    Some(parent) if parent.children.contains(&node.id) && p < node.id => {}
                    _ => errors.push(format!("node {} not listed under parent {p}", node.id)),
                }
            }
            for &c in &node.children {
                if self.nodes.get(c.index()).and_then(|n| n.parent) != Some(node.id) {
                    errors.push(format!("child {c} of {} points elsewhere", node.id));
                }
            }
            if !node.is_leaf() {
                let sum: u64 = node.children.iter().map(|c| self.nodes[c.index()].n_scheduled).sum();
                if sum != node.n_scheduled {
                    errors.push(format!(
                        "node {} scheduled {} times but its children sum to {sum}",
                        node.id, node.n_scheduled
                    ));
                }
            }
        }
        if errors.is_empty() {
            for node in &self.nodes {
                let fresh = self.recompute_subtree_union(node.id).expect("ids valid");
                if fresh != node.subtree_branches {
                    errors.push(format!("cached subtree union of {} is stale", node.id));
                }
            }
        }
        errors
    }

    /// Canonical JSON dump, nodes ordered by id.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tree serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TreeError> {
        let tree: Self = serde_json::from_str(text).map_err(|e| TreeError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        if tree.nodes.is_empty() || tree.root != SeedId::ROOT || tree.nodes[0].kind != NodeKind::Root {
            return Err(TreeError::Inconsistent("missing root node".into()));
        }
        let errors = tree.check_invariants();
        if let Some(first) = errors.into_iter().next() {
            return Err(TreeError::Inconsistent(first));
        }
        Ok(tree)
    }

    /// Indented outline with `(kind, n, |own|, |subtree|)` per node. Seeds are
    /// named `t<input>`, variants `t<input>'`.
    pub fn outline(&self) -> String {
        let mut out = String::new();
        let mut stack = vec![(self.root, 0usize)];
        while let Some((id, depth)) = stack.pop() {
            let node = &self.nodes[id.index()];
            let name = match (node.kind, node.input_ref) {
                (NodeKind::Root, _) => "root".to_string(),
                (NodeKind::Variant, Some(i)) => format!("t{i}'"),
                (_, Some(i)) => format!("t{i}"),
                (_, None) => "?".to_string(),
            };
            let kind = match node.kind {
                NodeKind::Root => "root",
                NodeKind::Seed => "seed",
                NodeKind::Variant => "variant",
            };
            let _ = writeln!(
                out,
                "{}{name} [#{}] ({kind}, n={}, own={}, subtree={})",
                "  ".repeat(depth),
                node.id,
                node.n_scheduled,
                node.own_branches.len(),
                node.subtree_branches.len()
            );
            for &c in node.children.iter().rev() {
                stack.push((c, depth + 1));
            }
        }
        out
    }
}
