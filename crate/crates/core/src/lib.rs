//! Hierarchical goal-conditioned reinforcement learning for grasping with a
//! hinged tweezer held by a dexterous hand.

pub mod checkpoint;
pub mod cloud;
pub mod encoder;
pub mod error;
pub mod gcrl;
pub mod geometry;
pub mod heuristic;
pub mod nn;
pub mod pipeline;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
