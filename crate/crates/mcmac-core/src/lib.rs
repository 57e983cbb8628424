//! Core algorithms for uplink multi-carrier multiple-access channels.
//!
//! This crate computes optimal power–subcarrier allocations, successive
//! interference cancellation (SIC) decoding orders, and time-sharing
//! schedules for uplink channels in which the total number of transmit
//! antennas can exceed the number of access-point antennas (a low-rank
//! channel). It also implements the OMA, NOMA, and MC-NOMA reference
//! schemes used for benchmarking.
//!
//! The crate is organised around the data flow of the allocator:
//!
//! 1. [`channel`] generates reproducible synthetic multi-carrier channel
//!    realizations (path loss, shadow fading, Rayleigh small-scale fading).
//! 2. [`rate`] evaluates SIC rates and subset capacity bounds from a
//!    channel set and a power allocation.
//! 3. [`solver`] solves the weighted energy-sum minimization and its dual
//!    rate-sum maximization, producing the dual certificate `theta`.
//! 4. [`ordering`] turns the certificate into a decoding order and tie
//!    clusters.
//! 5. [`timeshare`] averages several decoding orders over time so that the
//!    scheduled per-user rates hit targets no single order can reach.
//! 6. [`baselines`] implements the OMA / NOMA / MC-NOMA comparison schemes.
//!
//! The crate is `no_std`-compatible (with `alloc`); disable the default
//! `std` feature for embedded or kernel use. All randomness is derived
//! from explicit 64-bit seeds through counter-based substreams, so every
//! result is bit-reproducible regardless of iteration order.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod baselines;
pub mod channel;
pub mod error;
pub mod linalg;
pub mod ordering;
pub mod rate;
pub mod solver;
pub mod timeshare;

pub use error::{Error, Result};
