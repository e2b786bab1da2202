//! Tabletop brain-body pipeline.
//!
//! A quasi-static tabletop simulator exposes ground-truth observations that
//! are organised into scene graphs. A pluggable "brain" (a scripted oracle or
//! a remote chat-completion endpoint) proposes tasks, decomposes them into
//! primitive actions and judges completion from before/after graphs. The
//! collector runs the propose → decompose → execute → verify loop and logs
//! successful trajectories, which the policy module distils into a
//! task-conditioned regression policy. The diversity module scores the
//! proposed task sets.

pub mod brain;
pub mod collector;
pub mod config;
pub mod diversity;
pub mod policy;
pub mod scenegraph;
pub mod scenes;
pub mod util;
pub mod verifier;
pub mod world;

pub use config::SimConfig;
