//! Social structure inference for a small animal group from RTLS tag
//! positions: tag fusion, kinematics, pairwise event detection,
//! affiliation and dominance matrices, occupancy heat maps, and a
//! synthetic data generator with known ground truth.

pub mod cli;
pub mod config;
pub mod error;
pub mod events;
pub mod export;
pub mod geom;
pub mod ingest;
pub mod kinematics;
pub mod pipeline;
pub mod simgen;
pub mod social;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use geom::Vec3;
pub use pipeline::{Analysis, Pipeline, SocialStructure};
