//! Collision-risk assessment for road users observed from aerial video.
//!
//! The pipeline runs left to right through the modules:
//!
//! * [`trajectory_io`] parses per-frame detections and groups them into tracks.
//! * [`calibration`] estimates the metres-per-pixel scale and derives velocities.
//! * [`ttc`] computes pairwise geometry and time-to-collision for every frame.
//! * [`profiles`] aggregates TTC records into macroscopic/microscopic profiles,
//!   category statistics and a conflict heatmap.
//! * [`prediction`] trains a random forest that predicts next-step risk.
//! * [`evaluation`] scores tracking (MOTA) and risk labels against ground truth.
//! * [`synth`] generates constant-velocity scenarios with known answers.

pub mod calibration;
pub mod error;
pub mod evaluation;
pub mod geom;
pub mod prediction;
pub mod profiles;
pub mod synth;
pub mod trajectory_io;
pub mod ttc;

pub use error::{Error, Result};
pub use geom::Vec2;
