//! Downstream uses of the concept explanations: filtering noisy items out
//! of a retraining set, rejecting inputs, and ablating concepts, plus the
//! curves and statistics used to score them.

mod autoflag;
mod curves;
mod fairness;
mod ranking;
mod stats;

pub use autoflag::{auto_flag_concepts, AutoFlag, FLAG_SHARE};
pub use curves::{accuracy_rejection_curve, curve_auc, kept_useful_curve, ood_rejection_curve, Curve};
pub use fairness::{concept_ablation_repredict, equalized_odds_gap, EqualizedOdds, Rate, Repredictions, SkippedCell};
pub use ranking::{
    argmax, baseline_uncertainty_ranking, noise_filter_ranking, rank_descending, rejection_ranking,
    uncertainty_order, FilterMethod, FilterRanking, Ranking, RejectMethod, RejectionRanking,
};
pub use stats::{
    average_ranks, pearson_correlation, wilcoxon_one_sided, wilcoxon_paired, WilcoxonResult,
    EXACT_WILCOXON_MAX, MIN_WILCOXON_PAIRS,
};
