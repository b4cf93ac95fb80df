pub mod confidence;
pub mod config;
pub mod direct_match;
pub mod geometry;
pub mod grounding;
pub mod harness;
pub mod rng;
pub mod runner;
pub mod smc;
pub mod ui_graph;
pub mod workflow;
