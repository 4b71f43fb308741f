//! Simulation and evaluation platform for long-range street navigation agents.
//!
//! The crate covers the whole pipeline: street graph ingestion and repair
//! ([`graph`]), origin/destination task sampling ([`sampler`]), the
//! decision-point environment ([`env`]), policies including the LLM-backed
//! navigator ([`agent`]), external service clients with offline stand-ins
//! ([`clients`]), and metrics/replay ([`eval`]).

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod clients;
pub mod config;
pub mod env;
pub mod eval;
pub mod geo;
pub mod graph;
pub mod runner;
pub mod sampler;
pub mod synth;
pub mod trace;
