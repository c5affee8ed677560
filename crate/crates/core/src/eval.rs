//! Span-level scoring, learning curves, and cost-reduction summaries.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{extract_spans_io, Corpus};
use crate::embed::EmbeddingTable;
use crate::tagger::BaseModel;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrfScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

/// Exact-match span F1 over parallel label sequences. Spans must agree on
/// (start, end, type) to count; empty denominators score 0 by convention.
pub fn f1_score(pred: &[Vec<String>], gold: &[Vec<String>]) -> Result<PrfScore> {
    if pred.len() != gold.len() {
        return Err(Error::Validation(format!(
            "prediction/gold sentence counts differ: {} vs {}",
            pred.len(),
            gold.len()
        )));
    }
    let mut tp = 0;
    let mut fp = 0;
    let mut fn_ = 0;
    for (p, g) in pred.iter().zip(gold) {
        if p.len() != g.len() {
            return Err(Error::Validation(format!(
                "prediction/gold lengths differ: {} vs {}",
                p.len(),
                g.len()
            )));
        }
        let ps = extract_spans_io(p);
        let gs = extract_spans_io(g);
        let matched = ps.iter().filter(|s| gs.contains(s)).count();
        tp += matched;
        fp += ps.len() - matched;
        fn_ += gs.len() - matched;
    }
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(PrfScore {
        precision,
        recall,
        f1,
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
    })
}

/// Tags every corpus sentence with the model's most probable sequence and
/// scores it against the gold labels.
pub fn evaluate_model(model: &BaseModel, corpus: &Corpus, table: &EmbeddingTable) -> PrfScore {
    let pred: Vec<Vec<String>> =
        corpus.sentences.iter().map(|s| model.best_sequence(s, table).0).collect();
    let gold: Vec<Vec<String>> = corpus.sentences.iter().map(|s| s.labels.clone()).collect();
    f1_score(&pred, &gold).expect("shapes match by construction")
}

/// F1 after each annotation count, for one method and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningCurve {
    pub method: String,
    pub seed: u64,
    /// (n_labeled, f1), n strictly increasing.
    pub points: Vec<(usize, f64)>,
}

impl LearningCurve {
    pub fn validate(&self) -> Result<()> {
        for w in self.points.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::Validation(format!(
                    "curve {} not strictly increasing at n={}",
                    self.method, w[1].0
                )));
            }
        }
        for &(n, f1) in &self.points {
            if !(0.0..=1.0).contains(&f1) {
                return Err(Error::Validation(format!(
                    "curve {} has f1 {f1} at n={n}",
                    self.method
                )));
            }
        }
        Ok(())
    }

    pub fn final_f1(&self) -> Option<f64> {
        self.points.last().map(|&(_, f1)| f1)
    }
}

/// Percent of the full budget a method needs to reach the reference F1:
/// the smallest recorded n ≥ 1 with F1 at or above `reference_f1`, as
/// 100·n/budget, capped at 100; never reaching it scores 100.
pub fn cost_reduction(curve: &LearningCurve, reference_f1: f64, budget: usize) -> Result<f64> {
    if curve.points.is_empty() {
        return Err(Error::Validation(format!("curve {} is empty", curve.method)));
    }
    if budget == 0 {
        return Err(Error::Validation("budget must be positive".into()));
    }
    for &(n, f1) in &curve.points {
        if n >= 1 && f1 >= reference_f1 {
            return Ok((100.0 * n as f64 / budget as f64).min(100.0));
        }
    }
    Ok(100.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateCurve {
    pub method: String,
    /// (n_labeled, mean f1, standard error).
    pub points: Vec<(usize, f64, f64)>,
}

/// Pointwise mean and standard error over seeds. Curves with different
/// annotation grids are cut down to the n values common to all of them.
pub fn aggregate_curves(curves: &[LearningCurve]) -> Result<AggregateCurve> {
    let Some(first) = curves.first() else {
        return Err(Error::Validation("no curves to aggregate".into()));
    };
    let mut grid: Vec<usize> = first.points.iter().map(|&(n, _)| n).collect();
    for c in &curves[1..] {
        let ns: Vec<usize> = c.points.iter().map(|&(n, _)| n).collect();
        let before = grid.len();
        grid.retain(|n| ns.contains(n));
        if grid.len() != before || ns.len() != before {
            log::warn!(
                "curve grids differ ({} vs {}); aggregating on the common {} points",
                before,
                ns.len(),
                grid.len()
            );
        }
    }
    if grid.is_empty() {
        return Err(Error::Validation("curves share no annotation counts".into()));
    }
    let m = curves.len() as f64;
    let mut points = Vec::with_capacity(grid.len());
    for &n in &grid {
        let vals: Vec<f64> = curves
            .iter()
            .map(|c| {
                c.points
                    .iter()
                    .find(|&&(cn, _)| cn == n)
                    .map(|&(_, f1)| f1)
                    .expect("n is in every curve's grid")
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / m;
        let stderr = if curves.len() < 2 {
            0.0
        } else {
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0);
            (var / m).sqrt()
        };
        points.push((n, mean, stderr));
    }
    Ok(AggregateCurve { method: first.method.clone(), points })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CurveRow {
    method: String,
    seed: u64,
    n_labeled: usize,
    f1: f64,
}

pub fn write_curves_csv(path: impl AsRef<Path>, curves: &[LearningCurve]) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref()).map_err(csv_err)?;
    for c in curves {
        for &(n, f1) in &c.points {
            w.serialize(CurveRow { method: c.method.clone(), seed: c.seed, n_labeled: n, f1 })
                .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_curves_csv(path: impl AsRef<Path>) -> Result<Vec<LearningCurve>> {
    let mut r = csv::Reader::from_path(path.as_ref()).map_err(csv_err)?;
    let mut curves: Vec<LearningCurve> = Vec::new();
    for row in r.deserialize::<CurveRow>() {
        let row = row.map_err(csv_err)?;
        match curves.iter_mut().find(|c| c.method == row.method && c.seed == row.seed) {
            Some(c) => c.points.push((row.n_labeled, row.f1)),
            None => curves.push(LearningCurve {
                method: row.method,
                seed: row.seed,
                points: vec![(row.n_labeled, row.f1)],
            }),
        }
    }
    Ok(curves)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub f1_at_budget: f64,
    pub cost_reduction: f64,
}

pub fn write_summary_csv(path: impl AsRef<Path>, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref()).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_aggregate_csv(path: impl AsRef<Path>, agg: &AggregateCurve) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        method: &'a str,
        n_labeled: usize,
        mean_f1: f64,
        stderr: f64,
    }
    let mut w = csv::Writer::from_path(path.as_ref()).map_err(csv_err)?;
    for &(n, mean, se) in &agg.points {
        w.serialize(Row { method: &agg.method, n_labeled: n, mean_f1: mean, stderr: se })
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Validation(format!("csv: {other:?}")),
    }
}
