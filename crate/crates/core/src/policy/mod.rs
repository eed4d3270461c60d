//! Query scoring, mode-specific selection rules and the parameter updates
//! that run after each query.

mod modes;
mod scores;
mod update;

pub use modes::{
    baseline_select, choose, score_candidate, ucb_radius, ucb_score, Candidate, MetaBatchRule,
    Mode, Phase, ScheduleConfig, ScoreContext, UCB_C,
};
pub use scores::{
    combined_score, entropy_score, expected_loglik_score, exploit_from_weight, exploit_score,
    explore_from_weight, explore_score, kappa, prediction_confidence, prediction_uncertainty,
    select_query, similarity_weight, training_score, QueryHistory, ScoreBreakdown, ScoreField,
};
pub use update::{meta_update, online_update, MetaLosses};
