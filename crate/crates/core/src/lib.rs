//! Localization against an architectural plan with per-element estimation
//! of how the as-built structure deviates from the plan.
//!
//! The pipeline builds a hierarchical graph from the plan (walls, rooms,
//! doorways, floor), another one online from odometry and plane
//! observations, matches the two in a strict and a relaxed stage, merges
//! them with deviation variables and optimizes the result.

pub mod autodiff;
pub mod factor_graph;
pub mod geometry;
pub mod plan_model;
pub mod online_slam;
pub mod simulator;
pub mod matching;
pub mod fusion;
pub mod eval;
