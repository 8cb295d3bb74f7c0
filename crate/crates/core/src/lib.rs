//! Deterministic multicore simulator with recomputation-aware incremental checkpointing.

pub mod checkpoint;
pub mod cost;
pub mod harness;
pub mod isa;
pub mod machine;
pub mod program;
pub mod recovery;
pub mod sim;
pub mod slice;
pub mod text;
pub mod trace;
pub mod workload;
