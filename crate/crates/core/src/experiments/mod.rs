//! Experiment drivers: configuration, lambda selection, the trial loop,
//! the cost model and the CSV output.

pub mod complexity;
pub mod config;
pub mod csv_out;
pub mod runner;
pub mod simulations;
pub mod tuning;

pub use complexity::{calibrate_tau, complexity, m_star, m_star_hat, ComplexityModel};
pub use config::{default_lambda_grid, log_grid, ConfigFile, ExperimentConfig, Simulation};
pub use csv_out::{emit_csv, read_csv, write_csv, CSV_HEADER};
pub use runner::{evaluate_dkrr, fit_gmse, fit_gmse_cached, trial_means, GmseFit, RoundValue, TrialData};
pub use simulations::{
    run_motivation, run_simulation, run_simulation1, run_simulation2, run_simulation3, run_single, LambdaChoice,
    Report, RunMetadata, TauInfo,
};
pub use tuning::{
    grid_search_lambda, grid_search_lambda_cached, grid_search_lambda_dkrr, grid_search_lambda_dkrr_cached, LambdaSearch,
    TuningCache,
};
