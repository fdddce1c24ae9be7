//! Solver-verified experience library for natural-language optimization
//! modeling.

pub mod eval;
pub mod evolution;
pub mod exec;
pub mod insight;
pub mod learning;
pub mod llm;
pub mod retrieval;
pub mod sim;
pub mod solve;
pub mod store;
