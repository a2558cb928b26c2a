//! Syntax-aware instruction-following navigation on procedurally generated
//! viewpoint-graph worlds.
//!
//! The crate bundles everything needed to train and evaluate a navigation
//! agent whose language encoder consumes dependency (or constituency) parse
//! trees: tree ingestion ([`treeio`]), a dense f64 tensor core with
//! reverse-mode differentiation ([`nnmath`]), the instruction encoders
//! ([`encoder`]), a synthetic panoramic world generator ([`world`]), the
//! cross-modal navigation policy ([`agent`]), the mixed imitation /
//! actor-critic trainer ([`training`]), the trajectory-fidelity metric suite
//! ([`metrics`]) and the command-line surface ([`cli`]).

pub mod agent;
pub mod cli;
pub mod encoder;
pub mod metrics;
pub mod nnmath;
pub mod seeds;
pub mod training;
pub mod treeio;
pub mod world;
