//! Multilayer perceptron with batch normalization, dropout and Adam.
//!
//! Parameters live in one flat vector so the optimizer and gradient checks can
//! treat them uniformly. Per hidden layer the layout is `W` (out × in, row
//! major), then the batch-norm scale and shift; the output weights and bias
//! come last. Hidden layers carry no bias because batch norm cancels it.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{Activation, NnParams};
use super::{logit_loss, sigmoid, ModelError, TrainData};
use crate::preprocess::FeatureMatrix;
use crate::seed;

pub const MAX_EPOCHS: usize = 300;
pub const PATIENCE: usize = 12;
const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;

fn act(kind: Activation, a: f64) -> f64 {
    match kind {
        Activation::Relu => a.max(0.0),
        Activation::Elu => {
            if a > 0.0 {
                a
            } else {
                a.exp_m1()
            }
        }
        Activation::Selu => SELU_LAMBDA * if a > 0.0 { a } else { SELU_ALPHA * a.exp_m1() },
    }
}

fn act_grad(kind: Activation, a: f64) -> f64 {
    match kind {
        Activation::Relu => {
            if a > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Elu => {
            if a > 0.0 {
                1.0
            } else {
                a.exp()
            }
        }
        Activation::Selu => SELU_LAMBDA * if a > 0.0 { 1.0 } else { SELU_ALPHA * a.exp() },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub activation: Activation,
    /// Input width followed by each hidden width.
    pub dims: Vec<usize>,
    pub params: Vec<f64>,
    pub running_mean: Vec<Vec<f64>>,
    pub running_var: Vec<Vec<f64>>,
}

struct LayerCache {
    input: DMatrix<f64>,
    zhat: DMatrix<f64>,
    inv_std: DVector<f64>,
    pre_act: DMatrix<f64>,
    mask: Option<DMatrix<f64>>,
}

impl Mlp {
    pub fn n_hidden(&self) -> usize {
        self.dims.len() - 1
    }

    /// Offsets of (W, scale, shift) for hidden layer `l`.
    fn layer_offsets(&self, l: usize) -> (usize, usize, usize) {
        let mut off = 0;
        for k in 0..l {
            off += self.dims[k + 1] * self.dims[k] + 2 * self.dims[k + 1];
        }
        let w = off;
        let g = w + self.dims[l + 1] * self.dims[l];
        (w, g, g + self.dims[l + 1])
    }

    fn output_offset(&self) -> usize {
        let l = self.n_hidden();
        let (_, _, b) = self.layer_offsets(l - 1);
        b + self.dims[l]
    }

    pub fn n_params(dims: &[usize]) -> usize {
        let hidden: usize = dims.windows(2).map(|w| w[1] * w[0] + 2 * w[1]).sum();
        hidden + dims[dims.len() - 1] + 1
    }

    /// Fan-in scaled uniform weights, unit scale, zero shift and bias.
    pub fn init(
        n_inputs: usize,
        hidden_units: usize,
        layers: usize,
        activation: Activation,
        seed: u64,
    ) -> Mlp {
        let mut dims = vec![n_inputs];
        dims.extend(std::iter::repeat_n(hidden_units, layers));
        let mut params = Vec::with_capacity(Self::n_params(&dims));
        let mut rng = seed::rng(seed);
        let mut uniform = |fan_in: usize, count: usize, params: &mut Vec<f64>| {
            let limit = (3.0 / fan_in.max(1) as f64).sqrt();
            params.extend((0..count).map(|_| rng.random_range(-limit..limit)));
        };
        for w in dims.windows(2) {
            uniform(w[0], w[0] * w[1], &mut params);
            params.extend(std::iter::repeat_n(1.0, w[1]));
            params.extend(std::iter::repeat_n(0.0, w[1]));
        }
        let last = dims[dims.len() - 1];
        uniform(last, last, &mut params);
        params.push(0.0);
        Mlp {
            activation,
            running_mean: dims[1..].iter().map(|&h| vec![0.0; h]).collect(),
            running_var: dims[1..].iter().map(|&h| vec![1.0; h]).collect(),
            dims,
            params,
        }
    }

    pub fn with_params(&self, params: Vec<f64>) -> Mlp {
        assert_eq!(params.len(), self.params.len());
        Mlp {
            params,
            ..self.clone()
        }
    }

    /// Inference-mode logit for one row, using running batch-norm statistics.
    pub fn logit(&self, x: &[f64]) -> f64 {
        let mut h = x.to_vec();
        for l in 0..self.n_hidden() {
            let (wo, go, bo) = self.layer_offsets(l);
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let mut next = vec![0.0; n_out];
            for (u, out) in next.iter_mut().enumerate() {
                let row = &self.params[wo + u * n_in..wo + (u + 1) * n_in];
                let z: f64 = row.iter().zip(&h).map(|(w, v)| w * v).sum();
                let zhat = (z - self.running_mean[l][u]) / (self.running_var[l][u] + BN_EPS).sqrt();
                *out = act(
                    self.activation,
                    self.params[go + u] * zhat + self.params[bo + u],
                );
            }
            h = next;
        }
        let oo = self.output_offset();
        let n = h.len();
        self.params[oo + n]
            + self.params[oo..oo + n]
                .iter()
                .zip(&h)
                .map(|(w, v)| w * v)
                .sum::<f64>()
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }

    /// Training-mode forward pass over a batch. Returns the logits and the
    /// per-layer caches; batch statistics are returned for the running update.
    #[allow(clippy::type_complexity)]
    fn forward_train(
        &self,
        x: &DMatrix<f64>,
        dropout: f64,
        rng: Option<&mut rand_chacha::ChaCha8Rng>,
    ) -> (
        DVector<f64>,
        Vec<LayerCache>,
        Vec<(DVector<f64>, DVector<f64>)>,
    ) {
        let b = x.nrows();
        let mut caches = Vec::with_capacity(self.n_hidden());
        let mut stats = Vec::with_capacity(self.n_hidden());
        let mut h = x.clone();
        let mut rng = rng;
        for l in 0..self.n_hidden() {
            let (wo, go, bo) = self.layer_offsets(l);
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let w = DMatrix::from_row_slice(n_out, n_in, &self.params[wo..wo + n_out * n_in]);
            let z = &h * w.transpose();
            let mean = DVector::from_iterator(n_out, z.column_iter().map(|c| c.sum() / b as f64));
            let var = DVector::from_iterator(
                n_out,
                z.column_iter()
                    .enumerate()
                    .map(|(u, c)| c.iter().map(|v| (v - mean[u]).powi(2)).sum::<f64>() / b as f64),
            );
            let inv_std = var.map(|v| 1.0 / (v + BN_EPS).sqrt());
            let mut zhat = z;
            for u in 0..n_out {
                zhat.column_mut(u)
                    .apply(|v| *v = (*v - mean[u]) * inv_std[u]);
            }
            let mut pre = zhat.clone();
            for u in 0..n_out {
                let (g, s) = (self.params[go + u], self.params[bo + u]);
                pre.column_mut(u).apply(|v| *v = g * *v + s);
            }
            let mut out = pre.map(|a| act(self.activation, a));
            let mask = match (&mut rng, dropout > 0.0) {
                (Some(r), true) => {
                    let keep = 1.0 / (1.0 - dropout);
                    let m = DMatrix::from_fn(b, n_out, |_, _| {
                        if r.random::<f64>() < dropout {
                            0.0
                        } else {
                            keep
                        }
                    });
                    out.component_mul_assign(&m);
                    Some(m)
                }
                _ => None,
            };
            caches.push(LayerCache {
                input: h,
                zhat,
                inv_std,
                pre_act: pre,
                mask,
            });
            stats.push((mean, var));
            h = out;
        }
        let oo = self.output_offset();
        let n = h.ncols();
        let wout = DVector::from_column_slice(&self.params[oo..oo + n]);
        let logits = (&h * wout).add_scalar(self.params[oo + n]);
        caches.push(LayerCache {
            input: h,
            zhat: DMatrix::zeros(0, 0),
            inv_std: DVector::zeros(0),
            pre_act: DMatrix::zeros(0, 0),
            mask: None,
        });
        (logits, caches, stats)
    }

    /// L2 penalty `l2 * Σ‖W‖²` over hidden and output weight matrices.
    fn penalty(&self, l2: f64) -> f64 {
        if l2 == 0.0 {
            return 0.0;
        }
        let mut s = 0.0;
        for l in 0..self.n_hidden() {
            let (wo, go, _) = self.layer_offsets(l);
            s += self.params[wo..go].iter().map(|w| w * w).sum::<f64>();
        }
        let oo = self.output_offset();
        s += self.params[oo..oo + self.dims[self.n_hidden()]]
            .iter()
            .map(|w| w * w)
            .sum::<f64>();
        l2 * s
    }

    fn backward(
        &self,
        y: &[f64],
        logits: &DVector<f64>,
        caches: &[LayerCache],
        l2: f64,
    ) -> Vec<f64> {
        let b = y.len() as f64;
        let mut grad = vec![0.0; self.params.len()];
        let dlogit = DVector::from_iterator(
            logits.len(),
            logits.iter().zip(y).map(|(&z, &t)| (sigmoid(z) - t) / b),
        );
        let oo = self.output_offset();
        let last = &caches[self.n_hidden()].input;
        let n = last.ncols();
        let dwout = last.transpose() * &dlogit;
        for k in 0..n {
            grad[oo + k] = dwout[k] + 2.0 * l2 * self.params[oo + k];
        }
        grad[oo + n] = dlogit.sum();
        let wout = DVector::from_column_slice(&self.params[oo..oo + n]);
        let mut dh = &dlogit * wout.transpose();

        for l in (0..self.n_hidden()).rev() {
            let c = &caches[l];
            let (wo, go, bo) = self.layer_offsets(l);
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            if let Some(m) = &c.mask {
                dh.component_mul_assign(m);
            }
            let mut da = dh;
            da.zip_apply(&c.pre_act, |d, a| *d *= act_grad(self.activation, a));
            let mut dz = DMatrix::zeros(da.nrows(), n_out);
            for u in 0..n_out {
                let dcol = da.column(u);
                let zcol = c.zhat.column(u);
                grad[go + u] = dcol.dot(&zcol);
                grad[bo + u] = dcol.sum();
                let g = self.params[go + u];
                let dzhat = dcol * g;
                let s1 = dzhat.sum();
                let s2 = dzhat.dot(&zcol);
                let scale = c.inv_std[u] / b;
                for r in 0..da.nrows() {
                    dz[(r, u)] = scale * (b * dzhat[r] - s1 - zcol[r] * s2);
                }
            }
            let w = DMatrix::from_row_slice(n_out, n_in, &self.params[wo..wo + n_out * n_in]);
            let dw = dz.transpose() * &c.input;
            for u in 0..n_out {
                for k in 0..n_in {
                    let idx = wo + u * n_in + k;
                    grad[idx] = dw[(u, k)] + 2.0 * l2 * self.params[idx];
                }
            }
            dh = dz * w;
        }
        grad
    }

    /// Training-mode objective (mean cross-entropy plus L2) and its exact
    /// gradient, with dropout disabled and batch statistics from `x`.
    pub fn loss_and_gradient(&self, x: &FeatureMatrix, y: &[u8], l2: f64) -> (f64, Vec<f64>) {
        let xm = DMatrix::from_row_slice(x.n_rows, x.n_cols(), &x.values);
        let yf: Vec<f64> = y.iter().map(|&t| f64::from(t)).collect();
        let (logits, caches, _) = self.forward_train(&xm, 0.0, None);
        let loss = logit_loss(logits.as_slice(), y) + self.penalty(l2);
        (loss, self.backward(&yf, &logits, &caches, l2))
    }

    /// Training-mode objective only.
    pub fn loss(&self, x: &FeatureMatrix, y: &[u8], l2: f64) -> f64 {
        let xm = DMatrix::from_row_slice(x.n_rows, x.n_cols(), &x.values);
        let (logits, _, _) = self.forward_train(&xm, 0.0, None);
        logit_loss(logits.as_slice(), y) + self.penalty(l2)
    }

    /// Inference-mode mean cross-entropy.
    pub fn eval_loss(&self, x: &FeatureMatrix, y: &[u8]) -> f64 {
        let logits: Vec<f64> = x.rows().map(|r| self.logit(r)).collect();
        logit_loss(&logits, y)
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    fn new(n: usize, lr: f64) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        for k in 0..params.len() {
            self.m[k] = ADAM_BETA1 * self.m[k] + (1.0 - ADAM_BETA1) * grad[k];
            self.v[k] = ADAM_BETA2 * self.v[k] + (1.0 - ADAM_BETA2) * grad[k] * grad[k];
            params[k] -= self.lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + ADAM_EPS);
        }
    }
}

/// Trains with early stopping on validation loss and returns the best-epoch
/// network with the per-epoch validation losses.
pub fn train(p: &NnParams, data: TrainData<'_>, seed: u64) -> Result<(Mlp, Vec<f64>), ModelError> {
    let x = data.x_train;
    let mut net = Mlp::init(
        x.n_cols(),
        p.hidden_units,
        p.layers,
        p.activation,
        seed::derive(seed, "nn/init"),
    );
    let mut rng = seed::rng(seed::derive(seed, "nn/epochs"));
    let mut adam = Adam::new(net.params.len(), p.learning_rate);
    let (vx, vy) = if data.x_val.n_rows > 0 {
        (data.x_val, data.y_val)
    } else {
        (x, data.y_train)
    };

    let mut order: Vec<usize> = (0..x.n_rows).collect();
    let mut history = Vec::new();
    let mut best = (f64::INFINITY, net.clone());
    let mut since_best = 0;
    for epoch in 0..MAX_EPOCHS {
        order.shuffle(&mut rng);
        for chunk in order.chunks(p.batch_size) {
            let mut xb = DMatrix::zeros(chunk.len(), x.n_cols());
            for (r, &i) in chunk.iter().enumerate() {
                xb.row_mut(r).copy_from_slice(x.row(i));
            }
            let yb: Vec<f64> = chunk.iter().map(|&i| f64::from(data.y_train[i])).collect();
            let (logits, caches, stats) = net.forward_train(&xb, p.dropout, Some(&mut rng));
            if logits.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::Diverged {
                    stage: "epoch",
                    step: epoch + 1,
                });
            }
            let grad = net.backward(&yb, &logits, &caches, p.l2);
            adam.step(&mut net.params, &grad);
            for (l, (mean, var)) in stats.iter().enumerate() {
                for u in 0..mean.len() {
                    let rm = &mut net.running_mean[l][u];
                    *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * mean[u];
                    let rv = &mut net.running_var[l][u];
                    *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * var[u];
                }
            }
        }
        let val = net.eval_loss(vx, vy);
        if !val.is_finite() {
            return Err(ModelError::Diverged {
                stage: "epoch",
                step: epoch + 1,
            });
        }
        history.push(val);
        if val < best.0 {
            best = (val, net.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= PATIENCE {
                break;
            }
        }
    }
    Ok((best.1, history))
}
