//! L2-penalized logistic regression fitted by iteratively reweighted least squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::params::LrParams;
use super::{sigmoid, ModelError};
use crate::preprocess::FeatureMatrix;

const MAX_ITER: usize = 100;
const TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub intercept: f64,
    pub weights: Vec<f64>,
}

impl LogisticModel {
    pub fn zeros(n_features: usize) -> Self {
        LogisticModel {
            intercept: 0.0,
            weights: vec![0.0; n_features],
        }
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }

    /// Penalized negative log-likelihood: Σ logloss + ‖w‖² / (2C).
    fn objective(&self, x: &FeatureMatrix, y: &[u8], c: f64) -> f64 {
        let nll: f64 = x
            .rows()
            .zip(y)
            .map(|(row, &t)| {
                let z = self.logit(row);
                let softplus = if z > 0.0 {
                    z + (-z).exp().ln_1p()
                } else {
                    z.exp().ln_1p()
                };
                softplus - f64::from(t) * z
            })
            .sum();
        nll + self.weights.iter().map(|w| w * w).sum::<f64>() / (2.0 * c)
    }

    /// Newton iterations with step halving; intercept is not penalized.
    pub fn fit(
        params: &LrParams,
        x: &FeatureMatrix,
        y: &[u8],
    ) -> Result<(Self, Vec<String>), ModelError> {
        let d = x.n_cols();
        let p = d + 1;
        let penalty = 1.0 / params.c;
        let mut model = LogisticModel::zeros(d);
        let mut objective = model.objective(x, y, params.c);
        let mut warnings = Vec::new();
        let mut converged = false;

        for iter in 0..MAX_ITER {
            let mut grad = DVector::<f64>::zeros(p);
            let mut hess = DMatrix::<f64>::zeros(p, p);
            let mut aug = vec![0.0; p];
            for (row, &t) in x.rows().zip(y) {
                aug[0] = 1.0;
                aug[1..].copy_from_slice(row);
                let mu = model.predict_row(row);
                let r = mu - f64::from(t);
                let w = (mu * (1.0 - mu)).max(1e-12);
                for a in 0..p {
                    let va = aug[a];
                    if va == 0.0 {
                        continue;
                    }
                    grad[a] += r * va;
                    let wa = w * va;
                    for b in a..p {
                        hess[(a, b)] += wa * aug[b];
                    }
                }
            }
            for a in 1..p {
                grad[a] += penalty * model.weights[a - 1];
                hess[(a, a)] += penalty;
            }
            hess[(0, 0)] += 1e-10;
            for a in 0..p {
                for b in 0..a {
                    hess[(a, b)] = hess[(b, a)];
                }
            }
            let step = hess
                .cholesky()
                .ok_or(ModelError::Diverged {
                    stage: "newton iteration",
                    step: iter,
                })?
                .solve(&grad);

            let mut scale = 1.0;
            let mut accepted = None;
            for _ in 0..30 {
                let candidate = LogisticModel {
                    intercept: model.intercept - scale * step[0],
                    weights: model
                        .weights
                        .iter()
                        .enumerate()
                        .map(|(k, w)| w - scale * step[k + 1])
                        .collect(),
                };
                let obj = candidate.objective(x, y, params.c);
                if !obj.is_finite() {
                    return Err(ModelError::Diverged {
                        stage: "newton iteration",
                        step: iter,
                    });
                }
                if obj <= objective + 1e-12 * objective.abs() {
                    accepted = Some((candidate, obj));
                    break;
                }
                scale *= 0.5;
            }
            let Some((candidate, obj)) = accepted else {
                converged = true;
                break;
            };
            let max_change = step.iter().map(|s| (s * scale).abs()).fold(0.0, f64::max);
            model = candidate;
            objective = obj;
            if max_change < TOL {
                converged = true;
                break;
            }
        }
        if !converged {
            warnings.push(format!(
                "logistic regression did not converge in {MAX_ITER} iterations"
            ));
        }
        Ok((model, warnings))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_score_half() {
        let m = LogisticModel::zeros(3);
        assert_eq!(m.predict_row(&[1.0, -2.0, 5.0]), 0.5);
    }

    #[test]
    fn stationary_point_of_penalized_likelihood() {
        // gradient of the penalized objective vanishes at the fitted weights
        let rows: Vec<Vec<f64>> = (0..60)
            .map(|i| {
                let a = ((i * 37) % 17) as f64 / 8.0 - 1.0;
                let b = ((i * 11) % 13) as f64 / 6.0 - 1.0;
                vec![a, b]
            })
            .collect();
        let y: Vec<u8> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| u8::from(r[0] + 0.3 * r[1] + ((i % 5) as f64 - 2.0) * 0.3 > 0.0))
            .collect();
        let x = FeatureMatrix::from_rows(vec!["a".into(), "b".into()], &rows);
        let c = 1.0;
        let (m, warnings) = LogisticModel::fit(&LrParams { c }, &x, &y).unwrap();
        assert!(warnings.is_empty());
        let mut g = [0.0; 3];
        for (row, &t) in rows.iter().zip(&y) {
            let r = m.predict_row(row) - f64::from(t);
            g[0] += r;
            g[1] += r * row[0];
            g[2] += r * row[1];
        }
        g[1] += m.weights[0] / c;
        g[2] += m.weights[1] / c;
        assert!(g.iter().all(|v| v.abs() < 1e-6), "{g:?}");
    }

    #[test]
    fn separable_data_stays_finite() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64 / 10.0 - 2.0]).collect();
        let y: Vec<u8> = rows.iter().map(|r| u8::from(r[0] > 0.0)).collect();
        let x = FeatureMatrix::from_rows(vec!["a".into()], &rows);
        let (m, _) = LogisticModel::fit(&LrParams { c: 10.0 }, &x, &y).unwrap();
        assert!(m.weights[0].is_finite() && m.weights[0] > 0.0);
    }
}
