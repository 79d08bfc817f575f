//! Fault detection for LLM classifiers, with prompt-mutation confidence
//! smoothing (MuCS).
//!
//! - [`metrics`]: probability vectors, confidence, ECE, TRC, histograms.
//! - [`detectors`]: the ranking methods (Gini, Entropy, MaxP, Margin, MCP,
//!   ATS, NNS, TestRank-lite, BALD, random).
//! - [`model`]: the prompt → distribution abstraction.
//! - [`mutation`]: text and code mutation operators and MuCS smoothing.
//! - [`gateway`]: chat-completion client with caching, retries and cost
//!   accounting, plus an offline stub transport.
//! - [`harness`]: experiment runs over a budget grid and report tables.

pub mod detectors;
pub mod gateway;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod mutation;
