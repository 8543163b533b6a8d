//! Deterministic simulation and verification of silence-based atomic
//! commitment in synchronous systems with crash failures.
//!
//! The crate is organized around a small pipeline:
//!
//! * [`kernel`] — the round-based execution engine. Given a protocol, an
//!   initial-value vector and a failure schedule it produces a complete,
//!   reproducible [`kernel::Run`] record.
//! * [`protocols`] — step functions for the commit protocols (`stealth`,
//!   `d2`, `d1f1`, `d15`), the biased-to-1 flooding consensus they fall
//!   back on, and two deliberately broken mutants used to validate the
//!   checkers.
//! * [`enumerate`] — exhaustive enumeration of the bounded run universe:
//!   every initial-value vector crossed with every admissible crash
//!   schedule, discovered lazily during execution.
//! * [`analysis`] — message chains, reach sets, silent-choir verdicts,
//!   message-count bounds and atomic-commitment verdicts over runs.
//! * [`knowledge`] — facts about runs and the knowledge operator `K_i`,
//!   evaluated by literal indistinguishability over an enumerated
//!   universe, plus the property suites built on top of it.
//! * [`trace`] / [`diagram`] — canonical JSON traces and an ASCII
//!   round/message rendering.

pub mod analysis;
pub mod diagram;
pub mod enumerate;
pub mod kernel;
pub mod knowledge;
pub mod protocols;
pub mod trace;
