//! Protocol step functions behind one deterministic interface.
//!
//! Each protocol is a pure function of a process's local state. The
//! kernel evaluates [`Protocol::step`] once per process per time `t`:
//! the output's boundary parts apply at `t`, its sends execute in round
//! `t+1`, and a mid-round decision executes during round `t+1` (after
//! the sends) carrying time `t`.

use serde::{Deserialize, Serialize};

use crate::kernel::{ActiveState, Context, DecisionAction, Payload, ProcessId, SystemParams};

mod consensus;
mod d15;
mod d1f1;
mod d2;
mod mutants;
mod stealth;

pub use consensus::{check_b1_properties, B1Consensus, ConsensusParams};
pub use d15::D15;
pub use d1f1::D1f1;
pub use d2::D2;
pub use mutants::{MutantCommit0, MutantD2Choir};
pub use stealth::Stealth;

/// What a process does next, as computed from its state at time `t`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StepOutput {
    /// Sends for round `t+1`; self-targets are delivered virtually.
    pub sends: Vec<(ProcessId, Payload)>,
    /// Decision executed during round `t+1` after the sends, at time `t`.
    pub mid_round_decision: Option<DecisionAction>,
    /// Decision executed at the boundary, time `t`.
    pub boundary_decision: Option<DecisionAction>,
    /// Halt at time `t`: the local state freezes and nothing is sent.
    pub halt: bool,
}

impl StepOutput {
    pub(crate) fn halted() -> StepOutput {
        StepOutput {
            halt: true,
            ..Default::default()
        }
    }

    pub(crate) fn committing() -> StepOutput {
        StepOutput {
            boundary_decision: Some(DecisionAction::Commit),
            ..Default::default()
        }
    }

    pub(crate) fn sending(sends: Vec<(ProcessId, Payload)>) -> StepOutput {
        StepOutput {
            sends,
            ..Default::default()
        }
    }
}

/// A deterministic protocol: what a process sends and decides as a
/// function of its local state.
pub trait Protocol {
    fn name(&self) -> &str;

    /// Round bound by which every process has halted.
    fn default_horizon(&self, f: u8) -> u8;

    fn default_context(&self) -> Context {
        Context::GammaF
    }

    /// Rejects parameter combinations the protocol is not defined for.
    fn check_params(&self, _params: &SystemParams) -> Result<(), String> {
        Ok(())
    }

    fn step(&self, state: &ActiveState, params: &SystemParams) -> StepOutput;
}

/// The four commit protocols.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolKind {
    Stealth,
    D2,
    D1f1,
    D15,
}

impl ProtocolKind {
    pub const ALL: [ProtocolKind; 4] = [
        ProtocolKind::Stealth,
        ProtocolKind::D2,
        ProtocolKind::D1f1,
        ProtocolKind::D15,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProtocolKind::Stealth => "stealth",
            ProtocolKind::D2 => "d2",
            ProtocolKind::D1f1 => "d1f1",
            ProtocolKind::D15 => "d15",
        }
    }

    pub fn build(self) -> Box<dyn Protocol> {
        match self {
            ProtocolKind::Stealth => Box::new(Stealth),
            ProtocolKind::D2 => Box::new(D2),
            ProtocolKind::D1f1 => Box::new(D1f1),
            ProtocolKind::D15 => Box::new(D15),
        }
    }
}

/// Looks up a protocol by its CLI name. The two mutants are included so
/// the verification suites can be pointed at deliberately broken
/// protocols.
pub fn protocol_by_name(name: &str) -> Option<Box<dyn Protocol>> {
    match name {
        "stealth" => Some(Box::new(Stealth)),
        "d2" => Some(Box::new(D2)),
        "d1f1" => Some(Box::new(D1f1)),
        "d15" => Some(Box::new(D15)),
        "mutant-commit0" => Some(Box::new(MutantCommit0)),
        "mutant-d2-choir" => Some(Box::new(MutantD2Choir)),
        _ => None,
    }
}

/// Targets for a broadcast: every process, the sender included (its own
/// copy is delivered virtually).
pub(crate) fn broadcast(n: u8, payload: Payload) -> Vec<(ProcessId, Payload)> {
    (0..n).map(|i| (ProcessId(i), payload)).collect()
}
