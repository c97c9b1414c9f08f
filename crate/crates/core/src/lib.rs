//! Multi-object tracking with trajectory-level contrastive appearance learning.
//!
//! The numeric modules are generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the bottom of this file fix the precision for common uses. The simulator works in `f64`.

pub mod assignment;
pub mod embed;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod metrics;
pub mod motion;
pub mod mtcl;
pub mod scalar;
pub mod sim;
pub mod tracker;
pub mod vector;

pub use assignment::{brute_force_oracle, solve_min_cost, solve_with_threshold, AssignmentResult, CostMatrix};
pub use error::{Error, Result};
pub use geometry::{iou, BoundingBox, Detection};
pub use metrics::{clear_mot, evaluate, idf1, EvalResult, GroundTruthFrame};
pub use motion::{KalmanFilter, KalmanState};
pub use scalar::Scalar;
pub use tracker::{run_sequence, BetaMode, TrackStatus, Tracker, TrackerConfig};
pub use vector::{cosine_similarity, l2_normalize, Embedding};

pub type Box64 = BoundingBox<f64>;
pub type Box32 = BoundingBox<f32>;
pub type Detection64 = Detection<f64>;
pub type Detection32 = Detection<f32>;
pub type Embedding64 = Embedding<f64>;
pub type Embedding32 = Embedding<f32>;
pub type Tracker64 = Tracker<f64>;
pub type Tracker32 = Tracker<f32>;
pub type FeatureMap64 = embed::FeatureMap<f64>;
pub type FeatureMap32 = embed::FeatureMap<f32>;
pub type EmbeddingModel64 = embed::EmbeddingModel<f64>;
pub type EmbeddingModel32 = embed::EmbeddingModel<f32>;
