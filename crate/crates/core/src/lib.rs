//! Dual-channel black-box adversarial code generation.
//!
//! A lexical channel searches identifier renamings with a discrete particle
//! swarm; a structural channel applies semantics-preserving control-flow
//! rewrites. The two alternate on stagnation and share one global best.

pub mod frontend;
pub mod transforms;
pub mod victims;
pub mod lexicon;
pub mod rng;
pub mod swarm;
pub mod metrics;
pub mod orchestrator;
pub mod pipeline;
