//! LLM-assisted directed fuzzing.
//!
//! The pipeline prepares a campaign in four stages (static analysis,
//! retrieval-augmented usage derivation, seed optimization along the call
//! chain to the target, bug-specific mutator synthesis) and then runs a
//! directed fuzzing loop that mixes the synthesized mutator with random
//! byte-level mutation.

pub mod callgraph;
pub mod campaign;
pub mod knowledge;
pub mod llm;
pub mod mutator;
pub mod project;
pub mod query;
pub mod seedgen;
