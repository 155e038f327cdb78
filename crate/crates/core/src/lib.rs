//! Discrete-event simulation of gPTP clock distribution across TSN bridges
//! and a 5G system modeled as an 802.1AS time-aware virtual bridge.
//!
//! The crate is organized around a strictly single-threaded event engine
//! ([`simcore`]) driving protocol state machines ([`gptp`], [`fiveg`]) over
//! an exact integer timebase ([`timebase`]). Completed runs produce traces
//! that [`metrics`] turns into synchronicity reports, compliance verdicts
//! and error-budget decompositions. Scenario ingestion and artifact output
//! live in [`config`], [`runner`] and [`report`].
//!
//! Individual runs are deterministic for a given (scenario, seed) pair.
//! Independent runs share no state; [`runner::run_many`] executes them in
//! parallel when the `parallel` feature (default) is enabled.

pub mod config;
pub mod fiveg;
pub mod gptp;
pub mod metrics;
pub mod report;
pub mod runner;
pub mod scenarios;
pub mod simcore;
pub mod timebase;

pub use timebase::{quantize, ClockModel, Rational, TickDuration, Timestamp};
