//! Commit at time 1 for the single-failure case.
//!
//! Round 1 is all-to-all value-1 votes; a process holding all `n` votes
//! commits at time 1. Non-deciders broadcast `huh` in round 2, committed
//! processes answer each asker with `all1` in round 3, and at time 3 the
//! rest commit iff an `all1` arrived, aborting otherwise. Everyone has
//! halted by time 3.

use crate::kernel::{ActiveState, DecisionAction, Payload, SystemParams};
use crate::protocols::{broadcast, Protocol, StepOutput};

#[derive(Clone, Copy, Debug)]
pub struct D1f1;

impl Protocol for D1f1 {
    fn name(&self) -> &str {
        "d1f1"
    }

    fn default_horizon(&self, _f: u8) -> u8 {
        3
    }

    fn check_params(&self, params: &SystemParams) -> Result<(), String> {
        if params.f != 1 {
            return Err(format!("d1f1 requires f=1, got f={}", params.f));
        }
        Ok(())
    }

    fn step(&self, state: &ActiveState, params: &SystemParams) -> StepOutput {
        let n = params.n;
        match state.time {
            0 => {
                if state.initial_value {
                    StepOutput::sending(broadcast(n, Payload::One))
                } else {
                    StepOutput::default()
                }
            }
            1 => {
                if state.initial_value && state.count_held(1, Payload::One) == n as usize {
                    StepOutput::committing()
                } else {
                    StepOutput::sending(broadcast(n, Payload::Huh))
                }
            }
            2 => {
                if !state.has_committed() {
                    return StepOutput::default();
                }
                let askers: Vec<_> = state
                    .held_in_round(2)
                    .filter(|(_, p)| *p == Payload::Huh)
                    .map(|(s, _)| (s, Payload::All1))
                    .collect();
                if askers.is_empty() {
                    StepOutput::halted()
                } else {
                    StepOutput::sending(askers)
                }
            }
            3 => {
                let mut out = StepOutput::halted();
                if !state.has_committed() {
                    out.boundary_decision = Some(if state.holds_payload_in(3, Payload::All1) {
                        DecisionAction::Commit
                    } else {
                        DecisionAction::Abort
                    });
                }
                out
            }
            _ => StepOutput::default(),
        }
    }
}
