//! Distillation of tabular RL oracles into small oblique decision trees.
//!
//! The pipeline: solve (or learn) an exact critic for a grid-world task,
//! build per-observation action-value vectors weighted by discounted
//! visitation, cluster those vectors under cosine distance, grow a decision
//! tree whose oblique splits reproduce the clustering, and certify the
//! resulting return gap against the cosine-dissimilarity bound
//! `n * q_max * sqrt(2 * epsilon)`.
//!
//! The numeric core is generic over [`scalar::Scalar`] (`f32` or `f64`);
//! the `*64` aliases at the crate root pin the common `f64` instantiation.

pub mod cluster;
pub mod env;
pub mod error;
pub mod evalx;
pub mod multiagent;
pub mod oracle;
pub mod qvec;
pub mod rng;
pub mod scalar;
pub mod svmtree;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// `f64` instantiations of the main pipeline types.
pub type Maze64 = env::MazeSpec<f64>;
pub type Dynamics64 = env::Dynamics<f64>;
pub type Critic64 = oracle::OracleCritic<f64>;
pub type Visitation64 = oracle::VisitationDistribution<f64>;
pub type QVec64 = qvec::ActionValueVector<f64>;
pub type ClusterModel64 = cluster::ClusterModel<f64>;
pub type Hyperplane64 = svmtree::Hyperplane<f64>;
pub type Tree64 = svmtree::DecisionTree<f64>;
pub type Schedule64 = multiagent::GrowthSchedule<f64>;
pub type Report64 = evalx::ReturnGapReport<f64>;
