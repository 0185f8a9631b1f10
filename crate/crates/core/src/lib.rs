//! Mixed-criticality intra-UAV communication, as a deterministic software
//! artifact.
//!
//! The pieces, bottom up:
//!
//! - [`crc`] / [`wire`] — dual-CRC protected, constant-size object frames
//!   (black-channel protection of the position data).
//! - [`dpr`] — the "active" dual-ported RAM: a fixed memory map where every
//!   region sits behind a modified triple buffer with memory scrubbing and
//!   timestamp-based freshness tracking.
//! - [`channel`] — seedable serial links with deterministic fault injection
//!   (bit flips, drops, duplicates, freeze, babbling idiots).
//! - [`monitor`] — the flight-path safety monitor: median vote over
//!   redundant GPS receivers, geofence check, one-way escalation to a
//!   redundant controller or motor cutoff with parachute.
//! - [`hub`] — the flight-controller communication hub enforcing the
//!   criticality matrix with a fixed per-cycle byte budget.
//! - [`scenario`] / [`sim`] / [`metrics`] — the scenario-driven harness
//!   behind the `sim_harness` binary.

pub mod channel;
pub mod crc;
pub mod dpr;
pub mod hub;
pub mod metrics;
pub mod monitor;
pub mod scenario;
pub mod sim;
pub mod wire;
