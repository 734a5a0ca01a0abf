//! Citation URL verification.
//!
//! Model-generated answers cite URLs; some of those URLs never existed.
//! This crate extracts URLs from answer text or citation records, probes
//! them concurrently with a polite HTTP discipline, and uses the Wayback
//! Machine to split dead links into stale (once existed) versus
//! hallucinated (no trace of ever existing). On top of the per-URL
//! verdicts it computes grouped statistics with bootstrap confidence
//! intervals, sensitivity re-bucketings, stratified audit samples, and a
//! self-correction loop that feeds verdicts back to a generator.

pub mod archive;
pub mod classify;
pub mod cli;
pub mod extract;
pub mod probe;
pub mod report;
pub mod selfcorrect;
pub mod stats;
pub mod store;
