//! Ensemble issue resolution: generate candidate patches with a tool-using
//! agent, prune them by deduplication and regression tests, and pick one by
//! majority vote.

pub mod agent;
pub mod coder;
pub mod eval;
pub mod exec;
pub mod fixtures;
pub mod llm;
pub mod patch;
pub mod pipeline;
pub mod regression;
pub mod selector;
pub mod tools;
pub mod trajectory;
