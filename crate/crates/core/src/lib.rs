//! DeGroot opinion dynamics on directed communication graphs, a round-based
//! harness for networked chat agents, experiment records and the statistics
//! computed over them.

pub mod analysis;
pub mod chat;
pub mod dataset;
pub mod degroot;
pub mod graph;
pub mod harness;
pub mod prompts;
pub mod report;
pub mod rng;
pub mod scoring;
pub mod spectral;
