//! Two-stage math problem solving harness: zero-shot program generation,
//! sandboxed execution and grading, reasoning-conditioned retries, and
//! exact binomial statistics over the results.

pub mod dataset;
pub mod grader;
pub mod modelclient;
pub mod pipeline;
pub mod promptkit;
pub mod report;
pub mod sandbox;
pub mod stats;
pub mod sync;
