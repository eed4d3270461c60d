use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::clamped_exp;

/// Regions queried so far with their cached relevance means.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryHistory {
    pub steps: Vec<usize>,
    pub region_ids: Vec<usize>,
    pub mus: Vec<Vec<f64>>,
    pub spent: usize,
}

impl QueryHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.region_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.region_ids.is_empty()
    }

    pub fn contains(&self, region_id: usize) -> bool {
        self.region_ids.contains(&region_id)
    }

    /// Appends a query with uniform unit cost.
    pub fn record(&mut self, step: usize, region_id: usize, mu: Vec<f64>, budget: usize) -> Result<()> {
        if self.steps.last().is_some_and(|&s| s >= step) {
            return Err(Error::InvalidArgument("query steps must increase".into()));
        }
        if self.contains(region_id) {
            return Err(Error::AlreadyQueried(region_id));
        }
        if self.spent + 1 > budget {
            return Err(Error::BudgetExhausted { budget });
        }
        self.steps.push(step);
        self.region_ids.push(region_id);
        self.mus.push(mu);
        self.spent += 1;
        Ok(())
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Summed squared distance from `mu` to every queried relevance mean,
/// optionally divided by `|history| * K`.
pub fn similarity_weight(mu: &[f64], history: &QueryHistory, normalize: bool) -> f64 {
    if history.is_empty() {
        return 0.0;
    }
    let total: f64 = history.mus.iter().map(|m| sq_dist(mu, m)).sum();
    if normalize {
        total / (history.len() * mu.len().max(1)) as f64
    } else {
        total
    }
}

/// `max(0, (alpha C - t) / (alpha C + t))`.
pub fn kappa(budget: usize, alpha: f64, t: usize) -> f64 {
    let ac = alpha * budget as f64;
    let t = t as f64;
    if ac + t <= 0.0 {
        return 0.0;
    }
    ((ac - t) / (ac + t)).max(0.0)
}

/// `sum_i exp(-|p_i - 0.5|)`.
pub fn prediction_uncertainty(probs: &[f64]) -> f64 {
    probs.iter().map(|p| (-(p - 0.5).abs()).exp()).sum()
}

/// `sum_i exp(p_i)`.
pub fn prediction_confidence(probs: &[f64]) -> f64 {
    probs.iter().map(|p| p.exp()).sum()
}

/// Uncertainty score given a precomputed similarity weight.
pub fn explore_from_weight(w_x: f64, probs: &[f64]) -> f64 {
    clamped_exp(w_x) * prediction_uncertainty(probs)
}

/// Confidence score given a precomputed similarity weight.
pub fn exploit_from_weight(w_x: f64, probs: &[f64]) -> f64 {
    clamped_exp(-w_x) * prediction_confidence(probs)
}

/// Training-time sampling score: relevance dissimilarity times decoder uncertainty.
pub fn training_score(mu: &[f64], probs: &[f64], history: &QueryHistory, normalize: bool) -> f64 {
    explore_from_weight(similarity_weight(mu, history, normalize), probs)
}

/// Inference exploration score; the same form as [`training_score`].
pub fn explore_score(mu: &[f64], probs: &[f64], history: &QueryHistory, normalize: bool) -> f64 {
    training_score(mu, probs, history, normalize)
}

/// Inference exploitation score: relevance similarity times decoder confidence.
pub fn exploit_score(mu: &[f64], probs: &[f64], history: &QueryHistory, normalize: bool) -> f64 {
    exploit_from_weight(similarity_weight(mu, history, normalize), probs)
}

pub fn combined_score(explore: f64, exploit: f64, kappa: f64) -> f64 {
    kappa * explore + (1.0 - kappa) * exploit
}

fn scaled_distances(mu: &[f64], sigma_mean: f64, history: &QueryHistory) -> Result<Vec<f64>> {
    if !(sigma_mean > 0.0) {
        return Err(Error::InvalidArgument("sigma must be positive".into()));
    }
    Ok(history
        .mus
        .iter()
        .map(|m| sq_dist(mu, m) / (2.0 * sigma_mean * sigma_mean))
        .collect())
}

/// Entropy diagnostic: log-sum-exp of scaled squared distances to past queries.
pub fn entropy_score(mu: &[f64], sigma_mean: f64, history: &QueryHistory) -> Result<f64> {
    if history.is_empty() {
        return Err(Error::Empty("entropy_score needs a query history"));
    }
    let terms = scaled_distances(mu, sigma_mean, history)?;
    let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln())
}

/// Expected log-likelihood diagnostic.
pub fn expected_loglik_score(
    mu: &[f64],
    sigma_mean: f64,
    probs: &[f64],
    history: &QueryHistory,
) -> Result<f64> {
    let total: f64 = scaled_distances(mu, sigma_mean, history)?.iter().sum();
    Ok(clamped_exp(-total) * prediction_confidence(probs))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub region_id: usize,
    pub w_x: f64,
    pub relevance_uncertainty: f64,
    pub prediction_uncertainty: f64,
    pub exploit: f64,
    pub explore: f64,
    pub combined: f64,
    pub kappa: f64,
    /// Score used by the active policy (equals `combined` for the full method).
    pub selection: f64,
}

impl ScoreBreakdown {
    pub fn new(region_id: usize, w_x: f64, probs: &[f64], kappa: f64) -> Self {
        let explore = explore_from_weight(w_x, probs);
        let exploit = exploit_from_weight(w_x, probs);
        let combined = combined_score(explore, exploit, kappa);
        ScoreBreakdown {
            region_id,
            w_x,
            relevance_uncertainty: clamped_exp(w_x),
            prediction_uncertainty: prediction_uncertainty(probs),
            exploit,
            explore,
            combined,
            kappa,
            selection: combined,
        }
    }

    /// Whether the weighted exploration term is the larger part of `combined`.
    pub fn explore_dominant(&self) -> bool {
        self.kappa * self.explore > (1.0 - self.kappa) * self.exploit
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScoreField {
    Training,
    Explore,
    Exploit,
    Combined,
    Selection,
}

impl ScoreField {
    fn read(self, s: &ScoreBreakdown) -> f64 {
        match self {
            ScoreField::Training | ScoreField::Explore => s.explore,
            ScoreField::Exploit => s.exploit,
            ScoreField::Combined => s.combined,
            ScoreField::Selection => s.selection,
        }
    }
}

/// Argmax of `field`; ties go to the smallest region id.
pub fn select_query(candidates: &[ScoreBreakdown], field: ScoreField) -> Result<usize> {
    candidates
        .iter()
        .max_by(|a, b| {
            field
                .read(a)
                .total_cmp(&field.read(b))
                .then(b.region_id.cmp(&a.region_id))
        })
        .map(|s| s.region_id)
        .ok_or(Error::Empty("no candidate regions"))
}
