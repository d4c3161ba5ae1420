//! Binary decision tree storage shared by the forest and the booster.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        value: f64,
    },
    /// Rows with `x[feature] < threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Nodes in a flat arena; index 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        Tree {
            nodes: vec![Node::Leaf { value }],
        }
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if x[feature] < threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }
}

/// Builds a tree top-down from a split-finding callback.
///
/// `split` receives the rows of a node and its depth, and returns either a leaf
/// value or `(feature, threshold, left_rows, right_rows)`.
pub(crate) fn grow<F>(rows: Vec<usize>, mut split: F) -> Tree
where
    F: FnMut(&[usize], usize) -> Result<(usize, f64, Vec<usize>, Vec<usize>), f64>,
{
    let mut nodes = vec![Node::Leaf { value: 0.0 }];
    let mut stack = vec![(0usize, rows, 0usize)];
    while let Some((slot, rows, depth)) = stack.pop() {
        match split(&rows, depth) {
            Err(value) => nodes[slot] = Node::Leaf { value },
            Ok((feature, threshold, l, r)) => {
                let left = nodes.len();
                nodes.push(Node::Leaf { value: 0.0 });
                let right = nodes.len();
                nodes.push(Node::Leaf { value: 0.0 });
                nodes[slot] = Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
                stack.push((right, r, depth + 1));
                stack.push((left, l, depth + 1));
            }
        }
    }
    Tree { nodes }
}

/// Candidate thresholds for one feature: midpoints between consecutive distinct
/// values, with the rows sorted by that feature.
pub(crate) fn sorted_by_feature(
    rows: &[usize],
    column: impl Fn(usize) -> f64,
) -> Vec<(f64, usize)> {
    let mut v: Vec<(f64, usize)> = rows.iter().map(|&r| (column(r), r)).collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    v
}

/// Threshold strictly above `a` and at most `b`, for `a < b`.
pub(crate) fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m > a {
        m
    } else {
        b
    }
}
