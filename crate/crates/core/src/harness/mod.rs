//! Config files, multi-seed experiments, the projecting-order ablation and
//! the theory suite, with their output files.

mod config;
mod experiment;

pub use config::{
    ConfigOverrides, DataSection, DataSource, ExperimentConfig, FedFvSection, ModelChoice,
    ModelSection, RunSection, TrainSection,
};
pub use experiment::{
    build_federation, run_experiment, run_order_ablation, run_seed, run_settings, run_theory_suite,
    AblationResult, AblationRow, ExperimentSummary, Federation, SeedResult, SummaryStat,
    ABLATION_FILE, CLIENTS_FILE, EFFECTIVE_CONFIG_FILE, FAIRNESS_FILE, ORDER_MODES, ROUNDS_FILE,
    STATISTICS, SUMMARY_FILE, THEORY_FILE,
};
