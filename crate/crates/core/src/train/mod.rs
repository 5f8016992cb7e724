//! Optimization, evaluation, experiment protocols and result files.

mod emit;
mod experiment;
mod fit;
mod gradcheck;
mod optim;

pub use emit::{metrics_table, summary_table, sweep_chart, sweep_table, write_json, write_text};
pub use experiment::{
    ablate, baseline_no_prompt, derive_seeds, mean_std, prepare_all, run_averaged, run_seed,
    sweep_prompt_tokens, Ablation, Dataset, PreparedSplits, RunReport, SeedFailure, SeedRun,
    SweepEntry, TextOnlyProbe,
};
pub use fit::{evaluate, mean_loss, train, EvalResult, TrainLog};
pub use gradcheck::{gradcheck_model, GradCheckRun, GradCheckSettings};
pub use optim::Adam;
