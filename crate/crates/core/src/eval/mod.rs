//! Evaluation protocol: stratified splits, grid search, repeated-shuffle
//! scoring and the channel-ablation matrix.

pub mod experiment;
pub mod metrics;
pub mod report;
pub mod search;
pub mod split;

pub use experiment::{
    mean_std, run_ablation, run_experiment, run_single, CellReport, CnnSettings, EvalReport, Learner, Selection, ShuffleResult,
    TrialPlan,
};
pub use metrics::{f1_macro, f1_per_class, f1_score, Averaging};
pub use report::{plot_data, read_report, sig6, to_csv, to_json, write_report};
pub use search::{fit_seed, grid_search, GridFailure, GridResult};
pub use split::{plan_splits, stratified_shuffle_split, SplitFractions, SplitPlan, SHUFFLES};
