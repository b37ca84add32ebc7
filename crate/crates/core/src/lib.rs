//! Moment-inequality test of monotone equilibrium strategies in games of
//! incomplete information, from observed actions alone.

pub mod covariate;
pub mod error;
pub mod estimator;
pub mod games;
pub mod grid;
pub mod homogenize;
pub mod inference;
pub mod io;
pub mod montecarlo;
pub mod rng;
pub mod sample;

pub use covariate::{rescale_covariate, run_test_x};
pub use error::{Error, Result};
pub use estimator::{estimate_moments, MomentTable};
pub use games::{BenefitDerivative, GameClass, InverseDemand, MomentKernel, ObservationContext};
pub use grid::{build_grid, choose_q1, Grid, GridPoint, Window};
pub use homogenize::{ols_fit, run_test_semi, HomogenizationFit, ThetaMode};
pub use inference::{run_test, run_test_joint, TestConfig, TestResult};
pub use io::{emit_result, load_csv, ColumnMapping};
pub use sample::{infer_support, ActionSample, GameRecord, Support};
