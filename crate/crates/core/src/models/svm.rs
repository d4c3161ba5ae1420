//! Soft-margin kernel SVM trained by SMO, with a logistic link on the margin.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::params::{Kernel, SvmParams};
use super::{ModelError, TrainData};
use crate::preprocess::FeatureMatrix;

const EPS: f64 = 1e-3;
const TAU: f64 = 1e-12;
const MAX_ITER: usize = 100_000;
const CACHE_BYTES: usize = 64 << 20;
const PLATT_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelFn {
    pub kind: Kernel,
    pub gamma: f64,
    pub degree: u32,
    pub coef0: f64,
}

impl KernelFn {
    /// `gamma = 1 / (n_features * var(X))` over all training entries.
    pub fn scaled(kind: Kernel, degree: u32, x: &FeatureMatrix) -> Self {
        let n = x.values.len() as f64;
        let mean = x.values.iter().sum::<f64>() / n;
        let var = x.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let gamma = if var > 0.0 && x.n_cols() > 0 {
            1.0 / (x.n_cols() as f64 * var)
        } else {
            1.0
        };
        KernelFn {
            kind,
            gamma,
            degree,
            coef0: 0.0,
        }
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.kind {
            Kernel::Rbf => {
                let d2: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
                (-self.gamma * d2).exp()
            }
            Kernel::Polynomial => {
                let dot: f64 = a.iter().zip(b).map(|(u, v)| u * v).sum();
                (self.gamma * dot + self.coef0).powi(self.degree as i32)
            }
            Kernel::Sigmoid => {
                let dot: f64 = a.iter().zip(b).map(|(u, v)| u * v).sum();
                (self.gamma * dot + self.coef0).tanh()
            }
        }
    }
}

/// FIFO cache of kernel matrix rows.
struct RowCache<'a> {
    x: &'a FeatureMatrix,
    kernel: KernelFn,
    capacity: usize,
    rows: HashMap<usize, Vec<f64>>,
    order: VecDeque<usize>,
}

impl<'a> RowCache<'a> {
    fn new(x: &'a FeatureMatrix, kernel: KernelFn) -> Self {
        let capacity = (CACHE_BYTES / (8 * x.n_rows.max(1))).max(2);
        RowCache {
            x,
            kernel,
            capacity,
            rows: HashMap::new(),
            order: VecDeque::new(),
        }
    }

    fn row(&mut self, i: usize) -> &[f64] {
        if !self.rows.contains_key(&i) {
            if self.order.len() >= self.capacity {
                if let Some(old) = self.order.pop_front() {
                    self.rows.remove(&old);
                }
            }
            let xi = self.x.row(i);
            let r: Vec<f64> = self.x.rows().map(|xj| self.kernel.eval(xi, xj)).collect();
            self.rows.insert(i, r);
            self.order.push_back(i);
        }
        &self.rows[&i]
    }
}

/// Solution of the dual problem.
#[derive(Debug, Clone)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    pub rho: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Solves `min ½ αᵀQα − Σα` s.t. `0 ≤ α ≤ C`, `yᵀα = 0` with second-order
/// working-set selection. `y` is in {−1, +1}.
pub fn solve_dual(x: &FeatureMatrix, y: &[f64], c: f64, kernel: KernelFn) -> DualSolution {
    let n = x.n_rows;
    let mut cache = RowCache::new(x, kernel);
    let qd: Vec<f64> = x.rows().map(|r| kernel.eval(r, r)).collect();
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let upper = |a: f64| a >= c;
    let lower = |a: f64| a <= 0.0;

    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITER {
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if y[t] > 0.0 {
                if !upper(alpha[t]) && -grad[t] >= gmax {
                    gmax = -grad[t];
                    i = t;
                }
            } else if !lower(alpha[t]) && grad[t] >= gmax {
                gmax = grad[t];
                i = t;
            }
        }
        if i == usize::MAX {
            converged = true;
            break;
        }
        let ki = cache.row(i).to_vec();
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut obj_min = f64::INFINITY;
        for t in 0..n {
            if y[t] > 0.0 {
                if !lower(alpha[t]) {
                    let diff = gmax + grad[t];
                    gmax2 = gmax2.max(grad[t]);
                    if diff > 0.0 {
                        let quad = qd[i] + qd[t] - 2.0 * y[i] * ki[t];
                        let obj = -(diff * diff) / if quad > 0.0 { quad } else { TAU };
                        if obj <= obj_min {
                            obj_min = obj;
                            j = t;
                        }
                    }
                }
            } else if !upper(alpha[t]) {
                let diff = gmax - grad[t];
                gmax2 = gmax2.max(-grad[t]);
                if diff > 0.0 {
                    let quad = qd[i] + qd[t] + 2.0 * y[i] * ki[t];
                    let obj = -(diff * diff) / if quad > 0.0 { quad } else { TAU };
                    if obj <= obj_min {
                        obj_min = obj;
                        j = t;
                    }
                }
            }
        }
        if gmax + gmax2 < EPS || j == usize::MAX {
            converged = true;
            break;
        }
        iterations += 1;

        let kj = cache.row(j).to_vec();
        // Q_ij = y_i y_j K_ij
        let qij = y[i] * y[j] * ki[j];
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = (qd[i] + qd[j] + 2.0 * qij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (qd[i] + qd[j] - 2.0 * qij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * ki[t] * di + y[j] * kj[t] * dj);
        }
    }

    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut n_free, mut sum_free) = (0usize, 0.0);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if upper(alpha[t]) {
            if y[t] < 0.0 {
                ub = ub.min(yg)
            } else {
                lb = lb.max(yg)
            }
        } else if lower(alpha[t]) {
            if y[t] > 0.0 {
                ub = ub.min(yg)
            } else {
                lb = lb.max(yg)
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 {
        sum_free / n_free as f64
    } else {
        (ub + lb) / 2.0
    };
    DualSolution {
        alpha,
        rho,
        iterations,
        converged,
    }
}

/// Fits `P(y=1 | f) = 1 / (1 + exp(A f + B))` by Newton's method with
/// backtracking on smoothed targets.
pub fn platt_fit(f: &[f64], y: &[u8]) -> (f64, f64) {
    let prior1 = y.iter().filter(|&&t| t == 1).count() as f64;
    let prior0 = y.len() as f64 - prior1;
    let hi = (prior1 + 1.0) / (prior1 + 2.0);
    let lo = 1.0 / (prior0 + 2.0);
    let t: Vec<f64> = y.iter().map(|&v| if v == 1 { hi } else { lo }).collect();
    let objective = |a: f64, b: f64| -> f64 {
        f.iter()
            .zip(&t)
            .map(|(&fi, &ti)| {
                let z = fi * a + b;
                if z >= 0.0 {
                    ti * z + (-z).exp().ln_1p()
                } else {
                    (ti - 1.0) * z + z.exp().ln_1p()
                }
            })
            .sum()
    };
    let mut a = 0.0;
    let mut b = ((prior0 + 1.0) / (prior1 + 1.0)).ln();
    let mut fval = objective(a, b);
    for _ in 0..PLATT_ITER {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (1e-12, 1e-12, 0.0, 0.0, 0.0);
        for (&fi, &ti) in f.iter().zip(&t) {
            let z = fi * a + b;
            let (p, q) = if z >= 0.0 {
                let e = (-z).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = z.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += fi * fi * d2;
            h22 += d2;
            h21 += fi * d2;
            let d1 = ti - p;
            g1 += fi * d1;
            g2 += d1;
        }
        if g1.abs() < 1e-5 && g2.abs() < 1e-5 {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        while step >= 1e-10 {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                break;
            }
            step /= 2.0;
        }
        if step < 1e-10 {
            break;
        }
    }
    (a, b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub kernel: KernelFn,
    pub support_vectors: Vec<Vec<f64>>,
    /// `alpha_i * y_i` for each support vector.
    pub dual_coef: Vec<f64>,
    pub rho: f64,
    pub platt_a: f64,
    pub platt_b: f64,
}

impl SvmModel {
    pub fn fit(
        params: &SvmParams,
        data: TrainData<'_>,
    ) -> Result<(SvmModel, Vec<String>), ModelError> {
        let x = data.x_train;
        let kernel = KernelFn::scaled(params.kernel, params.degree, x);
        let y: Vec<f64> = data
            .y_train
            .iter()
            .map(|&t| if t == 1 { 1.0 } else { -1.0 })
            .collect();
        let sol = solve_dual(x, &y, params.c, kernel);
        let mut warnings = Vec::new();
        if !sol.converged {
            warnings.push(format!(
                "SMO stopped at the {MAX_ITER}-iteration cap before reaching tolerance"
            ));
        }
        let mut support_vectors = Vec::new();
        let mut dual_coef = Vec::new();
        for (i, &a) in sol.alpha.iter().enumerate() {
            if a > 0.0 {
                support_vectors.push(x.row(i).to_vec());
                dual_coef.push(a * y[i]);
            }
        }
        if !sol.rho.is_finite() || dual_coef.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Diverged {
                stage: "SMO iteration",
                step: sol.iterations,
            });
        }
        let mut model = SvmModel {
            kernel,
            support_vectors,
            dual_coef,
            rho: sol.rho,
            platt_a: -1.0,
            platt_b: 0.0,
        };
        let (fx, fy) = if data.x_val.n_rows > 0 {
            (data.x_val, data.y_val)
        } else {
            (x, data.y_train)
        };
        let f: Vec<f64> = fx.rows().map(|r| model.decision(r)).collect();
        let (a, b) = platt_fit(&f, fy);
        if !(a.is_finite() && b.is_finite()) {
            return Err(ModelError::Diverged {
                stage: "Platt iteration",
                step: PLATT_ITER,
            });
        }
        model.platt_a = a;
        model.platt_b = b;
        Ok((model, warnings))
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.dual_coef)
            .map(|(sv, &c)| c * self.kernel.eval(sv, x))
            .sum::<f64>()
            - self.rho
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let z = self.platt_a * self.decision(x) + self.platt_b;
        if z >= 0.0 {
            let e = (-z).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + z.exp())
        }
    }
}
