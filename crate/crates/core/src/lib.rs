//! Decentralized, latency-robust multi-agent trajectory planning.
pub mod config;
pub mod geometry;
pub mod global_path;
pub mod mpc;
pub mod planner;
pub mod safe_corridor;
pub mod scheduler;
pub mod sim;
pub mod tasc;
pub mod voxel_grid;
