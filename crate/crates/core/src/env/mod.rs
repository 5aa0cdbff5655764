//! The localization world: map and anchors, the ranging model, synthetic
//! and recorded trajectories, and sequence batching.

pub mod batch;
pub mod dataset;
pub mod geometry;
pub mod layout;
pub mod noise;
pub mod observation;
pub mod trajectory;

pub use batch::{make_batches, Batcher, SequenceBatch};
pub use dataset::{export_dataset, format_dataset, ingest_dataset, parse_dataset, IngestConfig};
pub use geometry::{true_distance, wall_crossings, MapRegion, Point, Wall};
pub use layout::{Anchor, AnchorId, AnchorLayout};
pub use noise::{simulate_measurement, NoiseModel};
pub use observation::{mask_observations, Masked, Observation, ObservationSet};
pub use trajectory::{
    generate_trajectory, generate_trajectory_from, simulate_measurements, MotionParams, Step, TrajectoryRecord,
};
