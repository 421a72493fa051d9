//! Numerical engine for stochastic processes that live on random horizons
//! of interval type.
//!
//! A horizon set `B` assigns to every scenario a time section `[0,T)` or
//! `[0,T]`; processes on `B` carry values at member nodes only, and values
//! outside the section are rejected rather than defaulted. The engine
//! realizes, on a uniform grid:
//!
//! - glued processes built from coupled ladders of stopping times and full
//!   paths ([`bprocess`]),
//! - the three horizon-restricted stochastic integrals (Stieltjes, against
//!   inner local martingales, against inner semimartingales) and their
//!   quadratic (co)variations ([`integrate`]),
//! - executable change-of-variable and integration-by-parts checks plus the
//!   consolidated law suite ([`calculus`]),
//! - a sudden-stop stock market with a closed-form optimal fraction and a
//!   brute-force Monte Carlo oracle confirming it ([`market`]),
//! - a sectioned plain-text config format and deterministic CSV reporting
//!   ([`config`], [`report`]).
//!
//! Grid conventions are chosen so that the structural identities (linearity,
//! associativity, jump/stop commutation, integration by parts) hold exactly
//! in floating point, not merely in the small-step limit.

// scenario/node index loops over parallel arrays are the house style here
#![allow(clippy::needless_range_loop)]

pub mod bprocess;
pub mod calculus;
pub mod config;
pub mod error;
pub mod grid;
pub mod integrate;
pub mod market;
pub mod math;
pub mod report;
pub mod rng;
pub mod sets;

pub use error::EngineError;

/// Result alias used across the engine.
pub type Result<T> = std::result::Result<T, EngineError>;
