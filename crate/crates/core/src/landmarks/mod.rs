//! Landmark lifecycle: the continual segment-means schedule and fixed landmarks
//! obtained by clustering token datasets.

mod kmeans;
mod schedule;

pub use kmeans::{init_indices, kmeans, kmeans_landmarks, subsample_tokens, KMeansFit};
pub use schedule::{LandmarkPair, LandmarkSchedule, LandmarkUpdate};
