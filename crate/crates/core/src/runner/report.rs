//! Per-task result tables and the plain point tables behind the figures.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::Task;
use crate::metrics::{Estimate, EvalReport, Metric, Significance};
use crate::models::Family;

pub const DAGGER: char = '†';

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyResult {
    pub family: Family,
    pub eval: EvalReport,
    /// Paired test against the headline model; `None` for the headline itself.
    pub significance: Option<Significance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResults {
    pub task: Task,
    /// Highest test AUC; significance is computed against this family.
    pub headline: Family,
    /// Highest validation AUC among the per-family winners.
    pub validation_best: Family,
    pub rows: Vec<FamilyResult>,
}

/// `0.66 (0.63, 0.70)`, with a trailing dagger when flagged.
pub fn format_cell(e: &Estimate, dagger: bool) -> String {
    let mut s = format!("{:.2} ({:.2}, {:.2})", e.point, e.ci_low, e.ci_high);
    if dagger {
        s.push(DAGGER);
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParsedCell {
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub dagger: bool,
}

pub fn parse_cell(cell: &str) -> Option<ParsedCell> {
    let cell = cell.trim();
    let (body, dagger) = match cell.strip_suffix(DAGGER) {
        Some(b) => (b.trim_end(), true),
        None => (cell, false),
    };
    let (point, rest) = body.split_once('(')?;
    let inner = rest.trim().strip_suffix(')')?;
    let (lo, hi) = inner.split_once(',')?;
    Some(ParsedCell {
        point: point.trim().parse().ok()?,
        ci_low: lo.trim().parse().ok()?,
        ci_high: hi.trim().parse().ok()?,
        dagger,
    })
}

pub fn table_header() -> String {
    let mut h = String::from("model");
    for m in Metric::ALL {
        h.push('\t');
        h.push_str(m.label());
    }
    h
}

/// One row per family. The dagger marks AUCs significantly different from
/// the headline model's.
pub fn task_table(results: &TaskResults) -> String {
    let mut out = table_header();
    out.push('\n');
    for row in &results.rows {
        out.push_str(row.family.label());
        for m in Metric::ALL {
            let dagger = m == Metric::Auc && row.significance.is_some_and(|s| s.significant);
            out.push('\t');
            out.push_str(&format_cell(&row.eval.estimate(m), dagger));
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedRow {
    pub model: String,
    pub cells: Vec<ParsedCell>,
}

pub fn parse_table(text: &str) -> Option<Vec<ParsedRow>> {
    let mut lines = text.lines();
    if lines.next()? != table_header() {
        return None;
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let mut parts = l.split('\t');
            let model = parts.next()?.to_string();
            let cells = parts.map(parse_cell).collect::<Option<Vec<_>>>()?;
            (cells.len() == Metric::ALL.len()).then_some(ParsedRow { model, cells })
        })
        .collect()
}

pub fn roc_table(eval: &EvalReport) -> String {
    let mut out = String::from("fpr\ttpr\tthreshold\n");
    for p in &eval.roc_points {
        let _ = writeln!(out, "{}\t{}\t{}", p.fpr, p.tpr, p.threshold);
    }
    out
}

pub fn pr_table(eval: &EvalReport) -> String {
    let mut out = String::from("recall\tprecision\tthreshold\n");
    for p in &eval.pr_points {
        let _ = writeln!(out, "{}\t{}\t{}", p.recall, p.precision, p.threshold);
    }
    out
}
