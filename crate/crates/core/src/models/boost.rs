//! Gradient-boosted regression trees on the logistic loss.

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::params::XgbParams;
use super::tree::{grow, midpoint, sorted_by_feature, Tree};
use super::{logit_loss, sigmoid, ModelError};
use crate::preprocess::FeatureMatrix;
use crate::seed;

const MIN_CHILD_WEIGHT: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Booster {
    pub base_margin: f64,
    /// Leaf values already include the learning rate.
    pub trees: Vec<Tree>,
}

/// L1 soft-thresholding of a gradient sum.
fn shrink(g: f64, l1: f64) -> f64 {
    if g > l1 {
        g - l1
    } else if g < -l1 {
        g + l1
    } else {
        0.0
    }
}

fn score(g: f64, h: f64, p: &XgbParams) -> f64 {
    let t = shrink(g, p.l1);
    t * t / (h + p.l2)
}

fn leaf_weight(g: f64, h: f64, p: &XgbParams) -> f64 {
    if h + p.l2 <= 0.0 {
        return 0.0;
    }
    -shrink(g, p.l1) / (h + p.l2)
}

struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

fn best_for_feature(
    x: &FeatureMatrix,
    rows: &[usize],
    grad: &[f64],
    hess: &[f64],
    f: usize,
    (g_total, h_total): (f64, f64),
    p: &XgbParams,
) -> Option<Candidate> {
    let sorted = sorted_by_feature(rows, |r| x.get(r, f));
    let parent = score(g_total, h_total, p);
    let (mut gl, mut hl) = (0.0, 0.0);
    let mut best: Option<Candidate> = None;
    for k in 0..sorted.len().saturating_sub(1) {
        let r = sorted[k].1;
        gl += grad[r];
        hl += hess[r];
        let (a, b) = (sorted[k].0, sorted[k + 1].0);
        if a == b {
            continue;
        }
        let (gr, hr) = (g_total - gl, h_total - hl);
        if hl < MIN_CHILD_WEIGHT || hr < MIN_CHILD_WEIGHT {
            continue;
        }
        let gain = score(gl, hl, p) + score(gr, hr, p) - parent - p.gamma;
        if gain > 0.0 && best.as_ref().is_none_or(|c| gain > c.gain) {
            best = Some(Candidate {
                gain,
                feature: f,
                threshold: midpoint(a, b),
            });
        }
    }
    best
}

fn fit_tree(
    x: &FeatureMatrix,
    rows: Vec<usize>,
    grad: &[f64],
    hess: &[f64],
    p: &XgbParams,
) -> Tree {
    grow(rows, |rows, depth| {
        let g: f64 = rows.iter().map(|&r| grad[r]).sum();
        let h: f64 = rows.iter().map(|&r| hess[r]).sum();
        let leaf = p.learning_rate * leaf_weight(g, h, p);
        if depth >= p.max_depth || rows.len() < 2 {
            return Err(leaf);
        }
        // Per-feature search runs in parallel; the reduction is in feature order
        // so the first-encountered best split wins regardless of scheduling.
        let per_feature: Vec<Option<Candidate>> = (0..x.n_cols())
            .into_par_iter()
            .map(|f| best_for_feature(x, rows, grad, hess, f, (g, h), p))
            .collect();
        let mut best: Option<Candidate> = None;
        for c in per_feature.into_iter().flatten() {
            if best.as_ref().is_none_or(|b| c.gain > b.gain) {
                best = Some(c);
            }
        }
        match best {
            None => Err(leaf),
            Some(c) => {
                let (l, r): (Vec<usize>, Vec<usize>) = rows
                    .iter()
                    .partition(|&&r| x.get(r, c.feature) < c.threshold);
                Ok((c.feature, c.threshold, l, r))
            }
        }
    })
}

impl Booster {
    /// Returns the model and the training log-loss after each round.
    pub fn fit(
        p: &XgbParams,
        x: &FeatureMatrix,
        y: &[u8],
        seed: u64,
    ) -> Result<(Booster, Vec<f64>), ModelError> {
        let n = x.n_rows;
        let mut margin = vec![0.0; n];
        let mut trees = Vec::with_capacity(p.n_rounds);
        let mut history = Vec::with_capacity(p.n_rounds);
        let k = ((p.subsample * n as f64).ceil() as usize).clamp(1, n);
        for round in 0..p.n_rounds {
            let prob: Vec<f64> = margin.iter().map(|&m| sigmoid(m)).collect();
            let grad: Vec<f64> = prob
                .iter()
                .zip(y)
                .map(|(&q, &t)| q - f64::from(t))
                .collect();
            let hess: Vec<f64> = prob.iter().map(|&q| q * (1.0 - q)).collect();
            let rows = if k == n {
                (0..n).collect()
            } else {
                let mut rng = seed::rng(seed::derive_indexed(seed, "xgb/round", round as u64));
                let mut idx = sample(&mut rng, n, k).into_vec();
                idx.sort_unstable();
                idx
            };
            let tree = fit_tree(x, rows, &grad, &hess, p);
            for (i, m) in margin.iter_mut().enumerate() {
                *m += tree.predict_row(x.row(i));
            }
            let loss = logit_loss(&margin, y);
            if !loss.is_finite() {
                return Err(ModelError::Diverged {
                    stage: "boosting round",
                    step: round + 1,
                });
            }
            history.push(loss);
            trees.push(tree);
        }
        Ok((
            Booster {
                base_margin: 0.0,
                trees,
            },
            history,
        ))
    }

    pub fn margin(&self, x: &[f64]) -> f64 {
        self.base_margin + self.trees.iter().map(|t| t.predict_row(x)).sum::<f64>()
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        sigmoid(self.margin(x))
    }
}
