//! Synthetic low-altitude scenes for multimodal ISAC learning.
//!
//! A base station with a uniform linear array serves a UAV flying a smooth
//! waypoint trajectory. Each slot yields a geometric multipath channel, the
//! best DFT-codebook beam, the path loss, and five sensor feature streams
//! (vision, radar, lidar, position, RF history) with random corruption
//! episodes. Everything is derived from one seed.

pub mod channel;
pub mod config;
pub mod dataset;
pub mod error;
pub mod modalities;
pub mod scene;
pub mod trajectory;

pub use channel::{array_response, dft_codebook, optimal_beam, path_loss_db, sum_rate, synthesize_channel, Path, PathSet};
pub use config::{Arena, CorruptionConfig, CorruptionMode, CorruptionSpec, ScenarioConfig, SensorNoise};
pub use dataset::{config_hash, generate_dataset, simulate, ColumnStats, Dataset, Manifest, Normalization, SlotRecord, Split};
pub use error::{Result, SimError};
pub use modalities::ModalitySynth;
pub use scene::{Scene, SlotState};
pub use trajectory::{generate_trajectory, KinematicState, Trajectory};
