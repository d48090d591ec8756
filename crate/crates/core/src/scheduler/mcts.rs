use crate::coverage::BranchSet;
use crate::seed_tree::{NodeKind, SeedId, SeedMutationTree, TreeError};

use super::Selection;

/// Inputs and result of one child's score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreBreakdown {
    /// Unique branches of the child relative to its siblings.
    pub q: u64,
    /// Times the child has been scheduled.
    pub n: u64,
    /// Times the child's parent has been scheduled.
    pub parent_n: u64,
    pub score: f64,
}

impl ScoreBreakdown {
    pub fn new(q: u64, n: u64, parent_n: u64, k: f64) -> Self {
        Self {
            q,
            n,
            parent_n,
            score: seed_score(q, n, parent_n, k),
        }
    }

    /// Mean reward `q / n`, undefined for unvisited nodes.
    pub fn mean_reward(&self) -> Option<f64> {
        (self.n > 0).then(|| self.q as f64 / self.n as f64)
    }
}

/// `q/n + k * sqrt(ln(parent_n) / n)`, or `+inf` for an unvisited node.
pub fn seed_score(q: u64, n: u64, parent_n: u64, k: f64) -> f64 {
    if n == 0 {
        return f64::INFINITY;
    }
    let n = n as f64;
    let exploration = if k == 0.0 {
        0.0
    } else {
        k * ((parent_n.max(1) as f64).ln() / n).sqrt()
    };
    q as f64 / n + exploration
}

/// For each set, the number of its branches that appear in no other set.
pub fn unique_branch_counts(sets: &[&BranchSet]) -> Vec<u64> {
    let mut scratch = Vec::new();
    unique_counts_with(sets, &mut scratch)
}

// Dense occurrence counting; `scratch` is left zeroed on return.
fn unique_counts_with(sets: &[&BranchSet], scratch: &mut Vec<u32>) -> Vec<u64> {
    let max_id = sets
        .iter()
        .filter_map(|s| s.as_slice().last())
        .map(|id| id.0 as usize)
        .max();
    let Some(max_id) = max_id else {
        return vec![0; sets.len()];
    };
    if scratch.len() <= max_id {
        scratch.resize(max_id + 1, 0);
    }
    for set in sets {
        for id in set.iter() {
            scratch[id.0 as usize] += 1;
        }
    }
    let counts = sets
        .iter()
        .map(|set| set.iter().filter(|id| scratch[id.0 as usize] == 1).count() as u64)
        .collect();
    for set in sets {
        for id in set.iter() {
            scratch[id.0 as usize] = 0;
        }
    }
    counts
}

/// Scores of every child of `anchor`, in child order. Internal children
/// contribute their subtree union; variants and leaves their own set.
pub fn score_children(
    tree: &SeedMutationTree,
    anchor: SeedId,
    k: f64,
) -> Result<Vec<(SeedId, ScoreBreakdown)>, TreeError> {
    let mut scratch = Vec::new();
    score_children_with(tree, anchor, k, &mut scratch)
}

fn score_children_with(
    tree: &SeedMutationTree,
    anchor: SeedId,
    k: f64,
    scratch: &mut Vec<u32>,
) -> Result<Vec<(SeedId, ScoreBreakdown)>, TreeError> {
    let node = tree.node(anchor)?;
    let children: Vec<_> = node
        .children
        .iter()
        .map(|&c| tree.node(c))
        .collect::<Result<_, _>>()?;
    let sets: Vec<&BranchSet> = children.iter().map(|c| &c.subtree_branches).collect();
    let qs = unique_counts_with(&sets, scratch);
    Ok(children
        .iter()
        .zip(qs)
        .map(|(c, q)| (c.id, ScoreBreakdown::new(q, c.n_scheduled, node.n_scheduled, k)))
        .collect())
}

/// Descends from the root, moving to the highest-scoring child (ties to the
/// smallest id) until a leaf is reached.
pub fn select_seed_mcts(tree: &SeedMutationTree, k: f64) -> Result<Selection, TreeError> {
    let mut scratch = Vec::new();
    select_with_scratch(tree, k, &mut scratch)
}

pub(super) fn select_with_scratch(
    tree: &SeedMutationTree,
    k: f64,
    scratch: &mut Vec<u32>,
) -> Result<Selection, TreeError> {
    let mut anchor = tree.root();
    let mut path = vec![anchor];
    let mut examined = 0u64;
    loop {
        let node = tree.node(anchor)?;
        if node.is_leaf() {
            break;
        }
        examined += node.children.len() as u64;
        // Unvisited children score +inf; the smallest id among them wins.
        let unvisited = node
            .children
            .iter()
            .copied()
            .filter(|&c| tree.node(c).map(|n| n.n_scheduled == 0).unwrap_or(false))
            .min();
        anchor = match unvisited {
            Some(c) => c,
            None => {
                let scored = score_children_with(tree, anchor, k, scratch)?;
                let mut best = scored[0];
                for &(id, s) in &scored[1..] {
                    if s.score > best.1.score || (s.score == best.1.score && id < best.0) {
                        best = (id, s);
                    }
                }
                best.0
            }
        };
        path.push(anchor);
    }
    let terminal = tree.node(anchor)?;
    let seed_node = match terminal.kind {
        NodeKind::Variant => terminal.parent.expect("variants have a parent"),
        NodeKind::Seed => terminal.id,
        NodeKind::Root => return Err(TreeError::Inconsistent("root has no children".into())),
    };
    Ok(Selection {
        input: terminal.input_ref.expect("seed nodes carry an input"),
        seed_node,
        path,
        nodes_examined: examined,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed_tree::tests::{bs, fig3_tree};
    use crate::seed_tree::EdgeLabel;
    use crate::target::InputId;
    use proptest::prelude::*;

    #[test]
    fn unique_branch_examples() {
        let (a, b, c) = (bs(&[1, 2, 3]), bs(&[2, 3, 4]), bs(&[3, 5]));
        assert_eq!(unique_branch_counts(&[&a, &b, &c]), vec![1, 1, 1]);
        assert_eq!(unique_branch_counts(&[&a, &a, &a]), vec![0, 0, 0]);
        assert_eq!(unique_branch_counts(&[&bs(&[1]), &bs(&[2])]), vec![1, 1]);
        assert_eq!(unique_branch_counts(&[&bs(&[])]), vec![0]);
    }

    #[test]
    fn seed_score_examples() {
        assert_eq!(seed_score(5, 5, 9, 0.0), 1.0);
        let rel = |a: f64, b: f64| ((a - b) / b).abs();
        assert!(rel(seed_score(3, 1, 2, 1.4), 3.0 + 1.4 * 2f64.ln().sqrt()) < 1e-12);
        assert!((seed_score(3, 1, 2, 1.4) - 4.16557).abs() < 1e-5);
        assert!((seed_score(0, 2, 4, 1.4) - 1.16557).abs() < 1e-5);
        assert_eq!(seed_score(0, 0, 0, 1.4), f64::INFINITY);
        assert_eq!(seed_score(7, 0, 3, 0.0), f64::INFINITY);
    }

    #[test]
    fn fresh_tree_descends_smallest_ids() {
        let tree = fig3_tree();
        let sel = select_seed_mcts(&tree, 1.4).unwrap();
        // root -> t1 -> t1' (variant, id 3)
        assert_eq!(sel.path, vec![SeedId(0), SeedId(1), SeedId(3)]);
        assert_eq!(sel.seed_node, SeedId(1));
        assert_eq!(sel.input, InputId(1));
        assert_eq!(sel.nodes_examined, 2 + 3);
    }

    #[test]
    fn higher_reward_child_wins() {
        let mut tree = crate::seed_tree::SeedMutationTree::new(vec![
            (InputId(0), bs(&[1, 2])),
            (InputId(1), bs(&[2, 3, 4, 5])),
        ])
        .unwrap();
        tree.backpropagate(&[SeedId(0), SeedId(1)]).unwrap();
        tree.backpropagate(&[SeedId(0), SeedId(2)]).unwrap();
        let scores = score_children(&tree, SeedId(0), 1.4).unwrap();
        assert_eq!(scores[0].1.q, 1);
        assert_eq!(scores[1].1.q, 3);
        assert!((scores[0].1.score - 2.16557).abs() < 1e-5);
        assert!((scores[1].1.score - 4.16557).abs() < 1e-5);
        assert_eq!(select_seed_mcts(&tree, 1.4).unwrap().input, InputId(1));
    }

    #[test]
    fn leaf_with_best_score_is_selected_below_anchor() {
        // anchor t_m with variant t_m', internal t_j and leaf t_k
        let label = EdgeLabel::new("havoc", 0);
        let mut tree = crate::seed_tree::SeedMutationTree::new(vec![(InputId(0), bs(&[1]))]).unwrap();
        let tm = SeedId(1);
        let tj = tree.add_seed(tm, InputId(1), bs(&[1, 2]), label.clone()).unwrap();
        let tk = tree.add_seed(tm, InputId(2), bs(&[1, 5, 6, 7]), label.clone()).unwrap();
        tree.add_seed(tj, InputId(3), bs(&[1, 2, 3]), label).unwrap();
        let tm_variant = tree.variant_of(tm).unwrap();
        let tj_variant = tree.variant_of(tj).unwrap();
        for path in [
            vec![SeedId(0), tm, tm_variant],
            vec![SeedId(0), tm, tj, tj_variant],
            vec![SeedId(0), tm, tj, SeedId(6)],
            vec![SeedId(0), tm, tk],
        ] {
            tree.backpropagate(&path).unwrap();
        }
        let sel = select_seed_mcts(&tree, 1.4).unwrap();
        assert_eq!(sel.path, vec![SeedId(0), tm, tk]);
        assert_eq!(sel.seed_node, tk);
    }

    proptest! {
        #[test]
        fn score_strictly_decreases_in_n(q in 0u64..1000, parent_n in 1000u64..100_000, n in 1u64..999) {
            prop_assert!(seed_score(q, n + 1, parent_n, 1.4) < seed_score(q, n, parent_n, 1.4));
        }

        #[test]
        fn unique_counts_match_set_difference(sets in prop::collection::vec(prop::collection::vec(0u32..40, 0..12), 1..6)) {
            let sets: Vec<BranchSet> = sets.iter().map(|s| s.iter().map(|&i| crate::coverage::BranchId(i)).collect()).collect();
            let refs: Vec<&BranchSet> = sets.iter().collect();
            let counts = unique_branch_counts(&refs);
            for (i, set) in sets.iter().enumerate() {
                let mut others = BranchSet::new();
                for (j, o) in sets.iter().enumerate() {
                    if i != j { others.union_with(o); }
                }
                prop_assert_eq!(counts[i], set.difference(&others).len() as u64);
            }
        }
    }
}
