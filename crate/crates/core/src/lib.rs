//! Winner's-curse-corrected inference for the top-k policy effects in a
//! linear regression with many covariates.
//!
//! Pipeline: partial the covariates out of the outcome and policies
//! ([`regression`]), estimate a heteroskedasticity-robust covariance of the
//! policy coefficients ([`covariance`]), then calibrate the top-ranked
//! effects by parametric resampling with near-tie averaging ([`inference`]).
//! Window constants are selected by a double bootstrap ([`tuning`]), and
//! [`simulation`] provides the data-generating processes and the Monte
//! Carlo coverage harness.

pub mod covariance;
pub mod dataset;
pub mod error;
pub mod inference;
pub mod regression;
pub mod rng;
pub mod simulation;
pub mod tuning;

pub use covariance::{
    ensure_psd, estimate_ew, estimate_hc3, estimate_hck, estimate_kj, CovarianceEstimate,
    EstimatorKind,
};
pub use dataset::Dataset;
pub use error::{Error, Result};
pub use inference::{
    calibrate, empirical_quantile, estimate_tie_set, observed_best_indices, resample_draw,
    select_d0_threshold, tie_averages, CalibrationReport, PolicyEstimate, RankReport, TieSet,
};
pub use regression::{
    build_annihilator, partialled_ols, AnnihilatorProjection, FitResult, ProjectionMode,
};
pub use simulation::{
    gen_dataset, monte_carlo, run_replication, BetaMode, CovariateDesign, DgpSpec, ErrorMode,
    GammaMode, McRow, Method, MonteCarloReport, PolicyDesign, RepRecord,
};
pub use tuning::{
    candidate_grid, evaluate_pair, loss_from_stats, select_tuning, shrink_center,
    uniform_loss_quantile,
    SelectionMode, TuningConfig, TuningPair,
};
