use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability at or above which a pixel is predicted positive.
pub const THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub t: usize,
    pub region_id: usize,
    /// Prediction map at selection time.
    pub probs: Vec<f64>,
    pub labels: Vec<u8>,
    /// Number of target pixels in the region.
    pub targets: usize,
    pub sr_contrib: f64,
    pub cost: usize,
}

/// Append-only record of the queries of one phase.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryLog {
    records: Vec<QueryRecord>,
}

/// Found targets over `min(C, U_t)`, capped at one; zero when the region has no targets.
pub fn step_contribution(probs: &[f64], labels: &[u8], budget: usize) -> f64 {
    let targets = labels.iter().filter(|&&y| y == 1).count();
    if targets == 0 {
        return 0.0;
    }
    let found = labels
        .iter()
        .zip(probs)
        .filter(|(&y, &p)| y == 1 && p >= THRESHOLD)
        .count();
    (found as f64 / budget.min(targets).max(1) as f64).min(1.0)
}

impl QueryLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[QueryRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn total_cost(&self) -> usize {
        self.records.iter().map(|r| r.cost).sum()
    }

    pub fn push(&mut self, t: usize, region_id: usize, probs: Vec<f64>, labels: Vec<u8>, cost: usize, budget: usize) -> Result<&QueryRecord> {
        if probs.len() != labels.len() {
            return Err(Error::Shape(format!("{} predictions for {} labels", probs.len(), labels.len())));
        }
        if self.total_cost() + cost > budget {
            return Err(Error::BudgetExhausted { budget });
        }
        let sr_contrib = step_contribution(&probs, &labels, budget);
        self.records.push(QueryRecord {
            t,
            region_id,
            targets: labels.iter().filter(|&&y| y == 1).count(),
            probs,
            labels,
            sr_contrib,
            cost,
        });
        Ok(self.records.last().expect("just pushed"))
    }
}

/// Success rate as `(raw sum, percent of steps)`.
pub fn sr_metric(log: &QueryLog, budget: usize) -> (f64, f64) {
    let raw: f64 = log
        .records()
        .iter()
        .map(|r| step_contribution(&r.probs, &r.labels, budget))
        .sum();
    let pct = if log.is_empty() {
        0.0
    } else {
        100.0 * raw / log.len() as f64
    };
    (raw, pct)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn add(&mut self, probs: &[f64], labels: &[u8]) {
        for (&y, &p) in labels.iter().zip(probs) {
            let predicted = p >= THRESHOLD;
            match (y, predicted) {
                (1, true) => self.tp += 1,
                (1, false) => self.fn_ += 1,
                (0, true) => self.fp += 1,
                (0, false) => self.tn += 1,
                _ => {}
            }
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn metrics(&self) -> Result<Classification> {
        if self.total() == 0 {
            return Err(Error::Empty("no labelled pixels"));
        }
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Ok(Classification {
            accuracy: ratio(self.tp + self.tn, self.total()),
            precision,
            recall,
            f1,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Pixelwise metrics over every revealed pixel labelled 0 or 1.
pub fn classification_metrics(log: &QueryLog) -> Result<Classification> {
    if log.is_empty() {
        return Err(Error::Empty("query log"));
    }
    let mut confusion = Confusion::default();
    for r in log.records() {
        confusion.add(&r.probs, &r.labels);
    }
    confusion.metrics()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sr_hand_cases() {
        let mut log = QueryLog::new();
        log.push(0, 0, vec![0.9; 4], vec![1; 4], 1, 50).unwrap();
        assert_eq!(sr_metric(&log, 50), (1.0, 100.0));
        // 2 of 5 targets found
        let probs = vec![0.9, 0.8, 0.1, 0.2, 0.3, 0.9];
        let labels = vec![1, 1, 1, 1, 1, 0];
        log.push(1, 1, probs, labels, 1, 50).unwrap();
        let (raw, pct) = sr_metric(&log, 50);
        assert_eq!(raw, 1.4);
        assert_eq!(pct, 70.0);
    }

    #[test]
    fn empty_region_contributes_nothing() {
        assert_eq!(step_contribution(&[0.9, 0.9], &[0, 2], 50), 0.0);
        assert_eq!(sr_metric(&QueryLog::new(), 50), (0.0, 0.0));
    }

    #[test]
    fn contribution_caps_at_one() {
        assert_eq!(step_contribution(&[0.9; 8], &[1; 8], 4), 1.0);
    }

    #[test]
    fn budget_enforced() {
        let mut log = QueryLog::new();
        log.push(0, 0, vec![0.1], vec![0], 1, 1).unwrap();
        assert!(log.push(1, 1, vec![0.1], vec![0], 1, 1).is_err());
    }

    #[test]
    fn classification_hand_case() {
        // tp: 0,1  fn: 2  fp: 3  tn: 4,5,6,7 ; pixel 8 ignored
        let probs = vec![0.9, 0.6, 0.2, 0.7, 0.1, 0.3, 0.4, 0.0, 0.99];
        let labels = vec![1, 1, 1, 0, 0, 0, 0, 0, 2];
        let mut log = QueryLog::new();
        log.push(0, 0, probs, labels, 1, 10).unwrap();
        let m = classification_metrics(&log).unwrap();
        assert_eq!(m.accuracy, 6.0 / 8.0);
        assert_eq!(m.precision, 2.0 / 3.0);
        assert_eq!(m.recall, 2.0 / 3.0);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn classification_conventions() {
        let mut log = QueryLog::new();
        log.push(0, 0, vec![0.1, 0.2], vec![1, 0], 1, 10).unwrap();
        let m = classification_metrics(&log).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        assert_eq!(m.accuracy, 0.5);
        let mut perfect = QueryLog::new();
        perfect.push(0, 0, vec![0.9, 0.2], vec![1, 0], 1, 10).unwrap();
        let m = classification_metrics(&perfect).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
        assert!(classification_metrics(&QueryLog::new()).is_err());
    }
}
