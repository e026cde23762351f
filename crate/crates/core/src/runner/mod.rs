//! Experiment orchestration: configuration, the baseline and projected
//! training loops, the command implementations and CSV metrics.
//!
//! A run directory holds:
//!
//! | file                    | written by | contents                              |
//! |-------------------------|------------|---------------------------------------|
//! | `init.dltr`             | train      | `w_0` as a one-record trajectory       |
//! | `final.dltr`            | train      | final baseline weights                 |
//! | `trajectory.dltr`       | train      | sampled snapshots                      |
//! | `metrics.csv`           | train      | baseline per-epoch metrics             |
//! | `run.meta`              | train      | `key=value` run facts incl. w_0 SHA-256 |
//! | `noise.dlnz`            | train      | label corruption, when enabled         |
//! | `basis.dlbs`            | extract    | subspace basis                         |
//! | `spectrum.csv`          | extract    | variance ratio of every component      |
//! | `projected_metrics.csv` | ptrain     | projected per-epoch metrics            |
//! | `projected_final.dltr`  | ptrain     | final projected weights                |
//! | `pbfgs_steps.csv`       | ptrain     | per-step P-BFGS log                    |
//! | `noise_summary.csv`     | noise      | SGD final/best and P-SGD final         |

mod commands;
pub mod config;
mod metrics;
mod train;

pub use commands::{
    checksum, cmd_extract, cmd_noise, cmd_ptrain, cmd_spectrum, cmd_train, pbfgs_log_csv, NoiseSummary, Spectrum,
    TrainResult, BASIS_FILE, FINAL_FILE, INIT_FILE, METRICS_FILE, NOISE_FILE, NOISE_SUMMARY_FILE, PBFGS_LOG_FILE,
    PROJECTED_FINAL_FILE, PROJECTED_METRICS_FILE, RUN_META_FILE, SPECTRUM_FILE, TRAJECTORY_FILE,
};
pub use config::{ExperimentConfig, ProjectedOptimizer};
pub use metrics::{emit_metrics, metrics_csv, MetricsRow, Phase, METRICS_HEADER};
pub use train::{
    prepare_data, run_baseline, run_projected, BaselineOutcome, PBfgsLogRow, PreparedData, ProjectedOutcome,
    ProjectedStep, CONFINEMENT_TOL,
};
