//! Ranking and threshold metrics, bootstrap intervals and paired t-tests.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::seed;

pub const DEFAULT_BOOTSTRAP: usize = 100;
pub const MAX_REDRAWS: usize = 1000;
pub const TARGET_SENSITIVITY: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("scores and labels differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("non-finite score at row {0}")]
    NonFinite(usize),
    #[error("label {0} is not 0 or 1")]
    BadLabel(u8),
    #[error("metric undefined: labels contain a single class")]
    SingleClass,
    #[error("metric undefined: no positive labels")]
    NoPositives,
    #[error("no two-class bootstrap resample after {0} attempts")]
    DegenerateBootstrap(usize),
}

fn check(scores: &[f64], labels: &[u8]) -> Result<(usize, usize), MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch(scores.len(), labels.len()));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricError::NonFinite(i));
    }
    if let Some(&b) = labels.iter().find(|&&l| l > 1) {
        return Err(MetricError::BadLabel(b));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    Ok((pos, labels.len() - pos))
}

fn check_two_class(scores: &[f64], labels: &[u8]) -> Result<(usize, usize), MetricError> {
    let (p, n) = check(scores, labels)?;
    if p == 0 || n == 0 {
        return Err(MetricError::SingleClass);
    }
    Ok((p, n))
}

/// Cumulative (threshold, tp, fp) after each distinct score, highest first.
fn sweep(scores: &[f64], labels: &[u8]) -> Vec<(f64, usize, usize)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        while k < order.len() && scores[order[k]] == s {
            if labels[order[k]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        out.push((s, tp, fp));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Rows scoring at or above this value are called positive.
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    pub threshold: f64,
}

/// ROC points at every distinct score, from the strictest threshold down.
/// The implicit (0, 0) origin is not included.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<RocPoint>, MetricError> {
    let (p, n) = check_two_class(scores, labels)?;
    Ok(sweep(scores, labels)
        .into_iter()
        .map(|(t, tp, fp)| RocPoint {
            fpr: fp as f64 / n as f64,
            tpr: tp as f64 / p as f64,
            threshold: t,
        })
        .collect())
}

/// Trapezoidal area under the ROC curve; equals pairwise concordance with ties as ½.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricError> {
    let pts = roc_curve(scores, labels)?;
    let (mut area, mut fx, mut ty) = (0.0, 0.0, 0.0);
    for p in pts {
        area += (p.fpr - fx) * (p.tpr + ty) / 2.0;
        fx = p.fpr;
        ty = p.tpr;
    }
    Ok(area)
}

pub fn pr_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<PrPoint>, MetricError> {
    let (p, _) = check(scores, labels)?;
    if p == 0 {
        return Err(MetricError::NoPositives);
    }
    Ok(sweep(scores, labels)
        .into_iter()
        .map(|(t, tp, fp)| PrPoint {
            recall: tp as f64 / p as f64,
            precision: tp as f64 / (tp + fp) as f64,
            threshold: t,
        })
        .collect())
}

/// Step-wise area under the precision-recall curve: Σ (Rₖ − Rₖ₋₁) Pₖ.
pub fn aupr(scores: &[f64], labels: &[u8]) -> Result<f64, MetricError> {
    let pts = pr_curve(scores, labels)?;
    let mut area = 0.0;
    let mut last = 0.0;
    for p in pts {
        area += (p.recall - last) * p.precision;
        last = p.recall;
    }
    Ok(area)
}

pub fn sens_spec_at(
    threshold: f64,
    scores: &[f64],
    labels: &[u8],
) -> Result<(f64, f64), MetricError> {
    let (p, n) = check_two_class(scores, labels)?;
    let (mut tp, mut tn) = (0, 0);
    for (&s, &l) in scores.iter().zip(labels) {
        let called = s >= threshold;
        if called && l == 1 {
            tp += 1;
        } else if !called && l == 0 {
            tn += 1;
        }
    }
    Ok((tp as f64 / p as f64, tn as f64 / n as f64))
}

/// Highest specificity over thresholds whose sensitivity is at least 95%.
pub fn spec_at_95_sens(scores: &[f64], labels: &[u8]) -> Result<f64, MetricError> {
    let (p, n) = check_two_class(scores, labels)?;
    Ok(sweep(scores, labels)
        .into_iter()
        .filter(|&(_, tp, _)| tp as f64 / p as f64 >= TARGET_SENSITIVITY)
        .map(|(_, _, fp)| (n - fp) as f64 / n as f64)
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
    pub distance: f64,
}

/// ROC point closest to (FPR 0, TPR 1); ties go to higher TPR, then lower threshold.
pub fn select_operating_threshold(
    scores: &[f64],
    labels: &[u8],
) -> Result<OperatingPoint, MetricError> {
    let pts = roc_curve(scores, labels)?;
    let mut best: Option<OperatingPoint> = None;
    for p in pts {
        let d2 = p.fpr * p.fpr + (1.0 - p.tpr) * (1.0 - p.tpr);
        let cand = OperatingPoint {
            threshold: p.threshold,
            fpr: p.fpr,
            tpr: p.tpr,
            distance: d2.sqrt(),
        };
        let better = match best {
            None => true,
            Some(b) => {
                let bd2 = b.fpr * b.fpr + (1.0 - b.tpr) * (1.0 - b.tpr);
                d2 < bd2
                    || (d2 == bd2
                        && (p.tpr > b.tpr || (p.tpr == b.tpr && p.threshold < b.threshold)))
            }
        };
        if better {
            best = Some(cand);
        }
    }
    Ok(best.expect("two-class curve has points"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Auc,
    Aupr,
    Sensitivity,
    Specificity,
    SpecAt95Sens,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Auc,
        Metric::Aupr,
        Metric::Sensitivity,
        Metric::Specificity,
        Metric::SpecAt95Sens,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Metric::Auc => "AUC",
            Metric::Aupr => "AUPR",
            Metric::Sensitivity => "Sens.",
            Metric::Specificity => "Spec.",
            Metric::SpecAt95Sens => "Spec.@95%Sens.",
        }
    }

    pub fn index(self) -> usize {
        Metric::ALL.iter().position(|&m| m == self).unwrap()
    }
}

/// All five metrics in `Metric::ALL` order, with sensitivity and specificity
/// taken at a fixed operating threshold.
pub fn metric_vector(
    scores: &[f64],
    labels: &[u8],
    threshold: f64,
) -> Result<[f64; 5], MetricError> {
    let (sens, spec) = sens_spec_at(threshold, scores, labels)?;
    Ok([
        roc_auc(scores, labels)?,
        aupr(scores, labels)?,
        sens,
        spec,
        spec_at_95_sens(scores, labels)?,
    ])
}

/// Resample indices drawn once per cohort so every model is scored on the
/// same resamples. Single-class draws are redrawn.
pub fn bootstrap_indices(
    labels: &[u8],
    n_resamples: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>, MetricError> {
    let n = labels.len();
    let pos = labels.iter().filter(|&&l| l == 1).count();
    if pos == 0 || pos == n {
        return Err(MetricError::SingleClass);
    }
    (0..n_resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = seed::rng(seed::derive_indexed(seed, "bootstrap", b as u64));
            for _ in 0..MAX_REDRAWS {
                let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                let p = idx.iter().filter(|&&i| labels[i] == 1).count();
                if p > 0 && p < n {
                    return Ok(idx);
                }
            }
            Err(MetricError::DegenerateBootstrap(MAX_REDRAWS))
        })
        .collect()
}

pub fn resample_metrics(
    scores: &[f64],
    labels: &[u8],
    threshold: f64,
    indices: &[Vec<usize>],
) -> Result<Vec<[f64; 5]>, MetricError> {
    check(scores, labels)?;
    indices
        .par_iter()
        .map(|idx| {
            let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
            let l: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
            metric_vector(&s, &l, threshold)
        })
        .collect()
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(samples: &[f64], q: f64) -> f64 {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn percentile_ci(samples: &[f64]) -> (f64, f64) {
    (percentile(samples, 0.025), percentile(samples, 0.975))
}

/// Percentile bootstrap interval for one metric function.
pub fn bootstrap_ci<F>(
    scores: &[f64],
    labels: &[u8],
    metric: F,
    n: usize,
    seed: u64,
) -> Result<(f64, f64, Vec<f64>), MetricError>
where
    F: Fn(&[f64], &[u8]) -> Result<f64, MetricError> + Sync,
{
    check_two_class(scores, labels)?;
    let idx = bootstrap_indices(labels, n, seed)?;
    let samples = idx
        .par_iter()
        .map(|ix| {
            let s: Vec<f64> = ix.iter().map(|&i| scores[i]).collect();
            let l: Vec<u8> = ix.iter().map(|&i| labels[i]).collect();
            metric(&s, &l)
        })
        .collect::<Result<Vec<f64>, _>>()?;
    let (lo, hi) = percentile_ci(&samples);
    Ok((lo, hi, samples))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    pub p_value: f64,
    pub significant: bool,
    /// Differences had zero variance, so `p` follows the limit convention.
    pub degenerate: bool,
}

/// Two-sided paired t-test on per-resample differences.
pub fn pairwise_significance(best: &[f64], other: &[f64], alpha: f64) -> Significance {
    assert_eq!(
        best.len(),
        other.len(),
        "paired samples must have equal length"
    );
    let n = best.len() as f64;
    let d: Vec<f64> = best.iter().zip(other).map(|(a, b)| a - b).collect();
    let mean = d.iter().sum::<f64>() / n;
    let var = if n > 1.0 {
        d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    if var == 0.0 || !var.is_finite() {
        let p = if mean == 0.0 { 1.0 } else { 0.0 };
        return Significance {
            p_value: p,
            significant: p < alpha,
            degenerate: true,
        };
    }
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).expect("valid t distribution");
    let p = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Significance {
        p_value: p,
        significant: p < alpha,
        degenerate: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Test-fold evaluation of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: Estimate,
    pub aupr: Estimate,
    pub sensitivity: Estimate,
    pub specificity: Estimate,
    pub spec_at_95_sens: Estimate,
    pub operating_threshold: f64,
    pub roc_points: Vec<RocPoint>,
    pub pr_points: Vec<PrPoint>,
    /// One row per resample, columns in `Metric::ALL` order.
    pub bootstrap_samples: Vec<[f64; 5]>,
}

impl EvalReport {
    pub fn estimate(&self, m: Metric) -> Estimate {
        match m {
            Metric::Auc => self.auc,
            Metric::Aupr => self.aupr,
            Metric::Sensitivity => self.sensitivity,
            Metric::Specificity => self.specificity,
            Metric::SpecAt95Sens => self.spec_at_95_sens,
        }
    }

    pub fn samples(&self, m: Metric) -> Vec<f64> {
        let k = m.index();
        self.bootstrap_samples.iter().map(|row| row[k]).collect()
    }
}

pub fn evaluate(
    scores: &[f64],
    labels: &[u8],
    threshold: f64,
    indices: &[Vec<usize>],
) -> Result<EvalReport, MetricError> {
    let point = metric_vector(scores, labels, threshold)?;
    let samples = resample_metrics(scores, labels, threshold, indices)?;
    let est = |k: usize| {
        let col: Vec<f64> = samples.iter().map(|r| r[k]).collect();
        let (ci_low, ci_high) = if col.is_empty() {
            (point[k], point[k])
        } else {
            percentile_ci(&col)
        };
        Estimate {
            point: point[k],
            ci_low,
            ci_high,
        }
    };
    Ok(EvalReport {
        auc: est(0),
        aupr: est(1),
        sensitivity: est(2),
        specificity: est(3),
        spec_at_95_sens: est(4),
        operating_threshold: threshold,
        roc_points: roc_curve(scores, labels)?,
        pr_points: pr_curve(scores, labels)?,
        bootstrap_samples: samples,
    })
}
