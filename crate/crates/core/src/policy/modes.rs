use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scores::{
    kappa, prediction_confidence, select_query, similarity_weight, QueryHistory, ScoreBreakdown,
    ScoreField,
};
use crate::clustering::auto_epsilon;
use crate::error::{Error, Result};
use crate::model::RelevanceMode;
use crate::numerics::Tensor;

/// Sampling policy: the full method, a baseline, or an ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    OwlGps,
    Ga,
    Al,
    Ucb,
    Random,
    Oml,
    Aml,
    NoRe,
    NoRg,
}

impl Mode {
    pub const ALL: [Mode; 9] = [
        Mode::OwlGps,
        Mode::Ga,
        Mode::Al,
        Mode::Ucb,
        Mode::Random,
        Mode::Oml,
        Mode::Aml,
        Mode::NoRe,
        Mode::NoRg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::OwlGps => "owl_gps",
            Mode::Ga => "ga",
            Mode::Al => "al",
            Mode::Ucb => "ucb",
            Mode::Random => "random",
            Mode::Oml => "oml",
            Mode::Aml => "aml",
            Mode::NoRe => "no_re",
            Mode::NoRg => "no_rg",
        }
    }

    pub fn relevance(self) -> RelevanceMode {
        match self {
            Mode::NoRe => RelevanceMode::FixedOnes,
            _ => RelevanceMode::Learned,
        }
    }

    /// Whether scores carry the `exp(+-w_x)` relevance factors.
    pub fn uses_similarity(self) -> bool {
        !matches!(self, Mode::NoRe | Mode::NoRg)
    }

    pub fn meta_batch(self) -> MetaBatchRule {
        match self {
            Mode::OwlGps | Mode::NoRe | Mode::NoRg => MetaBatchRule::Clustered,
            Mode::Oml => MetaBatchRule::WholeBuffer,
            Mode::Aml => MetaBatchRule::RandomCore,
            Mode::Ga | Mode::Al | Mode::Ucb | Mode::Random => MetaBatchRule::None,
        }
    }

    pub fn online_updates(self, phase: Phase) -> bool {
        match self {
            Mode::Aml => false,
            Mode::Ga => phase == Phase::Training,
            _ => true,
        }
    }

    pub fn meta_updates(self, phase: Phase) -> bool {
        self.meta_batch() != MetaBatchRule::None && !(self == Mode::Ga && phase == Phase::Inference)
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Mode> {
        Mode::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode `{s}`")))
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Training,
    Inference,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetaBatchRule {
    /// One pick per relevance cluster of the core plus reservoir draws.
    Clustered,
    /// Every entry currently held in either buffer.
    WholeBuffer,
    /// Uniform draws from the core buffer.
    RandomCore,
    None,
}

/// Budgets, exploration multiplier and sampling mode of a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub train_budget: usize,
    pub test_budget: usize,
    /// Scales the budget at which the exploration weight reaches zero.
    pub alpha: f64,
    pub mode: Mode,
    /// Divide the similarity weight by `|history| * K`.
    pub normalize_similarity: bool,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            train_budget: 30,
            test_budget: 50,
            alpha: 1.0,
            mode: Mode::OwlGps,
            normalize_similarity: true,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.test_budget < 1 {
            return Err(Error::Config("test_budget must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config("alpha must be positive".into()));
        }
        Ok(())
    }

    pub fn budget(&self, phase: Phase) -> usize {
        match phase {
            Phase::Training => self.train_budget,
            Phase::Inference => self.test_budget,
        }
    }
}

/// Forward-pass output for one unqueried region.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub region_id: usize,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub probs: Vec<f64>,
}

/// Exploration bonus constant of the UCB baseline.
pub const UCB_C: f64 = 1.0;

/// `mean(p) + c sqrt(2 ln(t + 1) / (1 + n_near))`.
pub fn ucb_score(candidate: &Candidate, history: &QueryHistory, radius: f64) -> f64 {
    let t = history.len() as f64;
    let n_near = history
        .mus
        .iter()
        .filter(|m| {
            m.iter()
                .zip(&candidate.mu)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
                <= radius
        })
        .count() as f64;
    let mean_p = candidate.probs.iter().sum::<f64>() / candidate.probs.len().max(1) as f64;
    mean_p + UCB_C * (2.0 * (t + 1.0).ln() / (1.0 + n_near)).sqrt()
}

/// Neighbourhood radius of the UCB visit count over past queries.
pub fn ucb_radius(history: &QueryHistory) -> f64 {
    if history.len() < 2 {
        return crate::clustering::DEGENERATE_EPSILON;
    }
    let k = history.mus[0].len();
    let flat: Vec<f64> = history.mus.iter().flatten().copied().collect();
    auto_epsilon(&Tensor::from_parts(history.len(), k, flat))
}

/// Scoring context for one selection step.
#[derive(Clone, Copy, Debug)]
pub struct ScoreContext<'a> {
    pub mode: Mode,
    pub phase: Phase,
    pub history: &'a QueryHistory,
    pub step: usize,
    pub budget: usize,
    pub alpha: f64,
    pub normalize: bool,
}

/// Full score breakdown with `selection` set to what `ctx.mode` maximizes.
pub fn score_candidate(candidate: &Candidate, ctx: &ScoreContext<'_>, ucb_radius: f64) -> ScoreBreakdown {
    let w_x = if ctx.mode.uses_similarity() {
        similarity_weight(&candidate.mu, ctx.history, ctx.normalize)
    } else {
        0.0
    };
    let k = kappa(ctx.budget, ctx.alpha, ctx.step);
    let mut s = ScoreBreakdown::new(candidate.region_id, w_x, &candidate.probs, k);
    s.selection = match (ctx.phase, ctx.mode) {
        (Phase::Training, _) => s.explore,
        (Phase::Inference, Mode::Ga) => prediction_confidence(&candidate.probs),
        (Phase::Inference, Mode::Al) => s.explore,
        (Phase::Inference, Mode::Ucb) => ucb_score(candidate, ctx.history, ucb_radius),
        (Phase::Inference, _) => s.combined,
    };
    s
}

/// Scores every candidate and picks one according to `ctx.mode`.
pub fn choose(
    candidates: &[Candidate],
    ctx: &ScoreContext<'_>,
    rng: &mut impl Rng,
) -> Result<(usize, Vec<ScoreBreakdown>)> {
    if candidates.is_empty() {
        return Err(Error::Empty("no candidate regions"));
    }
    let radius = if ctx.mode == Mode::Ucb {
        ucb_radius(ctx.history)
    } else {
        0.0
    };
    let scores: Vec<ScoreBreakdown> = candidates
        .iter()
        .map(|c| score_candidate(c, ctx, radius))
        .collect();
    let chosen = if ctx.mode == Mode::Random {
        scores[rng.random_range(0..scores.len())].region_id
    } else {
        select_query(&scores, ScoreField::Selection)?
    };
    Ok((chosen, scores))
}

/// Selection for the baseline and ablation modes.
pub fn baseline_select(
    mode: Mode,
    candidates: &[Candidate],
    history: &QueryHistory,
    budget: usize,
    rng: &mut impl Rng,
) -> Result<usize> {
    if mode == Mode::OwlGps {
        return Err(Error::InvalidArgument(
            "baseline_select does not handle the full method".into(),
        ));
    }
    let ctx = ScoreContext {
        mode,
        phase: Phase::Inference,
        history,
        step: history.len(),
        budget,
        alpha: 1.0,
        normalize: true,
    };
    choose(candidates, &ctx, rng).map(|(id, _)| id)
}
