//! Rule-based knowledge graph completion with multi-rule aggregation.

pub mod aggregation;
pub mod eval;
pub mod grounding;
pub mod kg;
pub mod pipeline;
pub mod prob;
pub mod rules;
pub mod verify;
