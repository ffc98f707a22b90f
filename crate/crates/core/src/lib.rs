//! Gradient-flow adversarial perturbations for random ReLU networks whose
//! widths shrink layer by layer.
//!
//! * [`linalg`]: seeded Gaussian matrices and extremal singular values.
//! * [`relunet`]: bias-free ReLU networks, activation masks, exact input
//!   gradients.
//! * [`surjectivity`]: surjectivity constants of column submatrices and
//!   supporting Monte-Carlo checks.
//! * [`typicality`]: typical-weights and typical-example predicates.
//! * [`attack`]: normalized gradient flow and plain gradient descent
//!   sign-flip attacks.
//! * [`datatrain`]: IDX (MNIST) loading, synthetic data, SGD training.
//! * [`experiment`]: seeded experiment runners producing CSV tables.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod datatrain;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod relunet;
pub mod surjectivity;
pub mod table;
pub mod typicality;

pub use attack::{
    gd_attack, gradient_flow_attack, trajectory_gradient_floor, AttackConfig, AttackOutcome,
    AttackResult,
};
pub use error::{Error, Result};
pub use linalg::{extremal_singular_values, gaussian_matrix, spectral_norm, Matrix, RngState};
pub use relunet::{activation_pattern, ActivationPattern, ForwardTrace, NetworkWeights};
pub use surjectivity::{
    estimate_c1c2, submatrix_sigma_k, tail_sum_mc, vershynin_check, SubsetMode,
    SurjectivityReport, TailSumStats,
};
pub use typicality::{
    example_typicality, weight_typicality, TypicalityReport, WeightTypicalityReport,
};
