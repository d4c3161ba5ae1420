//! Random forest of Gini trees on bootstrap samples.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::params::RfParams;
use super::tree::{grow, midpoint, sorted_by_feature, Tree};
use crate::preprocess::FeatureMatrix;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
}

fn gini(pos: f64, n: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    let p = pos / n;
    2.0 * p * (1.0 - p)
}

fn fit_tree(x: &FeatureMatrix, y: &[u8], max_depth: usize, tree_seed: u64) -> Tree {
    let n = x.n_rows;
    let d = x.n_cols();
    let mtry = ((d as f64).sqrt().floor() as usize).clamp(1, d.max(1));
    let mut rng = seed::rng(tree_seed);
    let boot: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();

    grow(boot, |rows, depth| {
        let total = rows.len() as f64;
        let pos = rows.iter().filter(|&&r| y[r] == 1).count() as f64;
        let leaf = pos / total;
        if depth >= max_depth || pos == 0.0 || pos == total || d == 0 {
            return Err(leaf);
        }
        let mut features = sample(&mut rng, d, mtry).into_vec();
        features.sort_unstable();
        let parent = gini(pos, total);
        let mut best: Option<(f64, usize, f64)> = None;
        for &f in &features {
            let sorted = sorted_by_feature(rows, |r| x.get(r, f));
            let mut left_pos = 0.0;
            for k in 0..sorted.len() - 1 {
                left_pos += f64::from(y[sorted[k].1]);
                let (a, b) = (sorted[k].0, sorted[k + 1].0);
                if a == b {
                    continue;
                }
                let nl = (k + 1) as f64;
                let nr = total - nl;
                let child = (nl * gini(left_pos, nl) + nr * gini(pos - left_pos, nr)) / total;
                let gain = parent - child;
                if gain > 1e-12 && best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, f, midpoint(a, b)));
                }
            }
        }
        match best {
            None => Err(leaf),
            Some((_, f, thr)) => {
                let (l, r): (Vec<usize>, Vec<usize>) =
                    rows.iter().partition(|&&r| x.get(r, f) < thr);
                Ok((f, thr, l, r))
            }
        }
    })
}

impl Forest {
    /// Trees are grown in parallel; each has its own derived seed so the
    /// result does not depend on scheduling.
    pub fn fit(params: &RfParams, x: &FeatureMatrix, y: &[u8], seed: u64) -> Forest {
        let trees = (0..params.n_trees)
            .into_par_iter()
            .map(|t| {
                fit_tree(
                    x,
                    y,
                    params.max_depth,
                    seed::derive_indexed(seed, "rf/tree", t as u64),
                )
            })
            .collect();
        Forest { trees }
    }

    pub fn tree_scores(&self, x: &[f64]) -> Vec<f64> {
        self.trees.iter().map(|t| t.predict_row(x)).collect()
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict_row(x)).sum::<f64>() / self.trees.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn threshold_fixture(n: usize) -> (FeatureMatrix, Vec<u8>) {
        let mut rng = seed::rng(11);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let y = rows.iter().map(|r| u8::from(r[2] > 0.1)).collect();
        (
            FeatureMatrix::from_rows((0..4).map(|i| format!("f{i}")).collect(), &rows),
            y,
        )
    }

    #[test]
    fn noiseless_rule_is_learned() {
        let (x, y) = threshold_fixture(200);
        let f = Forest::fit(
            &RfParams {
                max_depth: 5,
                n_trees: 256,
            },
            &x,
            &y,
            3,
        );
        let correct = x
            .rows()
            .zip(&y)
            .filter(|(r, &t)| u8::from(f.predict_row(r) >= 0.5) == t)
            .count();
        assert!(correct as f64 / 200.0 >= 0.99, "accuracy {correct}/200");
    }

    #[test]
    fn score_is_mean_of_tree_leaves() {
        let (x, y) = threshold_fixture(5);
        let y = if y.iter().all(|&v| v == y[0]) {
            vec![0, 1, 0, 1, 1]
        } else {
            y
        };
        let f = Forest::fit(
            &RfParams {
                max_depth: 3,
                n_trees: 32,
            },
            &x,
            &y,
            8,
        );
        for row in x.rows() {
            let mean = f.tree_scores(row).iter().sum::<f64>() / 32.0;
            let p = f.predict_row(row);
            assert!((p - mean).abs() < 1e-15 && (0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn depth_is_bounded_and_fit_is_deterministic() {
        let (x, y) = threshold_fixture(120);
        let a = Forest::fit(
            &RfParams {
                max_depth: 3,
                n_trees: 32,
            },
            &x,
            &y,
            5,
        );
        let b = Forest::fit(
            &RfParams {
                max_depth: 3,
                n_trees: 32,
            },
            &x,
            &y,
            5,
        );
        assert_eq!(a, b);
        assert!(a.trees.iter().all(|t| t.depth() <= 3));
    }
}
