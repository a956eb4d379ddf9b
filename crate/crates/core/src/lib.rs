//! Milestone-based progress tracking for long-horizon instruction following.

pub mod grounding;
pub mod mask;
pub mod milestone;
pub mod nn;
pub mod perception;
pub mod rng;
pub mod tagger;
pub mod tracker;
pub mod world;
pub mod agent;
pub mod runner;
pub mod eval;
