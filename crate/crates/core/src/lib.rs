//! Embedded feature selection with L1- and L2-regularized multinomial
//! logistic regression.
//!
//! The crate trains penalized softmax regression with a SAGA solver, ranks
//! features by the magnitude of the learned coefficients, intersects the L1
//! and L2 rankings into a "common features" set and validates selected sets
//! with CART decision trees and random forests. [`bench`] strings the stages
//! into a reproducible, config-driven experiment grid.

pub mod bench;
mod error;
pub mod ingest;
pub mod linear;
pub mod matrix;
pub mod metrics;
pub mod optim;
pub mod seed;
pub mod select;
pub mod synthetic;
pub mod trees;

pub use error::{Error, ErrorKind, Result};
pub use ingest::{Dataset, RawTable, SamplingPlan, ScalerParams, SplitPair};
pub use linear::LogRegModel;
pub use matrix::Matrix;
pub use metrics::{ConfusionMatrix, Report};
pub use optim::{PenaltyKind, PenaltySpec, SagaConfig, StepSize, WeightMatrix};
pub use select::{AccuracyCurve, Aggregation, CommonFeatureSet, FeatureRanking};
pub use trees::{ForestParams, RandomForest, TreeNode, TreeParams};
