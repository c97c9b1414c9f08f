//! Multi-view appearance extraction from feature maps.

mod feature_map;
mod offsets;
mod projection;
mod views;

pub use feature_map::FeatureMap;
pub use offsets::{clip_keypoints, Keypoint, OffsetHead, SamplingPattern};
pub use projection::{Linear, ProjectionDims, ProjectionHead, ProjectionTrace};
pub use views::{backward_views, embed_target, forward_views, EmbeddingModel, Gradients, ViewsTape};
