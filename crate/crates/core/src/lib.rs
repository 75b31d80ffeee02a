//! Wideband near-field multi-user localization with a true-time-delay (TTD)
//! hybrid antenna array.
//!
//! A base station with an extremely large uniform linear array receives OFDM
//! pilot signals from users located in the radiating near field, where the
//! spherical shape of the wavefront carries both range and angle information
//! (curvature of arrival). This crate provides:
//!
//! - the wideband channel and steering-vector model ([`channel`]),
//! - the TTD + phase-shifter hybrid combiner ([`hybrid_array`]),
//! - maximum-likelihood localization by alternating projection ([`estimator`]),
//! - Fisher-information / Cramér-Rao bound analysis ([`fisher`]),
//! - analog-coefficient optimization that maximizes the trace of the Fisher
//!   information ([`analog_design`]),
//! - joint localization and beamfocusing without prior position knowledge
//!   ([`joint`]),
//! - a reproducible Monte Carlo experiment harness ([`experiments`]) with a
//!   flat key=value configuration format ([`config`]) and CSV outputs
//!   ([`runner`]).

pub mod analog_design;
pub mod channel;
pub mod config;
pub mod estimator;
pub mod experiments;
pub mod fisher;
pub mod geometry;
pub mod hybrid_array;
pub mod joint;
pub mod runner;

/// Propagation speed used throughout, meters per second.
pub const SPEED_OF_LIGHT: f64 = 3.0e8;
