//! Synthesis of executable world models by LLM-guided tree search, together
//! with the baselines, planners and benchmark plumbing used to evaluate them.

pub mod baselines;
pub mod bench;
pub mod eval;
pub mod fixtures;
pub mod llm;
pub mod model;
pub mod planners;
pub mod sandbox;
pub mod search;
