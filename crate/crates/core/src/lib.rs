//! Differentially private LASSO under objective and output perturbation:
//! synthetic data, AMP and coordinate-descent solvers, state evolution,
//! replica fixed points and KL-based privacy metrics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod amp;
pub mod cd;
pub mod dataset_io;
pub mod error;
mod linalg;
pub mod model;
pub mod privacy;
pub mod quadrature;
pub mod rng;
pub mod scalar_kernel;
pub mod special;
pub mod state_evolution;
pub mod stats;

pub use amp::{run_amp, AmpFixedPoint, AmpState, SolverOptions};
pub use cd::{solve_lasso_tilted, CdOptions, CdOrder, CdSolution};
pub use error::{Error, Result};
pub use model::{
    generate_dataset, make_one_point_mutant, sample_privacy_noise, Dataset, Mechanism, ModelParams, NoiseVector,
};
pub use privacy::{PrivacyReport, TradeoffPoint};
pub use scalar_kernel::{ScalarChannel, SeDensity};
pub use state_evolution::{se_fixed_point, ReplicaFixedPoint, SeFixedPoint, SeOptions, SeState};
