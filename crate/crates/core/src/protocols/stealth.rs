//! Message-optimal commit in three rounds.
//!
//! Fast path: value-1 votes funnel to process 0 in round 1; process 0
//! relays `all1` to the choir `{0..f}` in round 2; round 3 is silent
//! unless a choir member is missing its evidence, and a process that
//! hears nothing in round 3 commits at time 3. Round 4 is a second
//! silent broadcast: hearing no `huh` lets everyone halt at time 4.
//! Slow path: `err` in round 3, `huh` in round 4, then `f` sub-rounds of
//! biased-to-1 consensus starting in round 5, deciding at time `f + 4`.

use crate::kernel::{ActiveState, Payload, ProcessId, SystemParams};
use crate::protocols::consensus::{ConsensusParams, ConsensusPhase};
use crate::protocols::{broadcast, Protocol, StepOutput};

#[derive(Clone, Copy, Debug)]
pub struct Stealth;

impl Protocol for Stealth {
    fn name(&self) -> &str {
        "stealth"
    }

    fn default_horizon(&self, f: u8) -> u8 {
        f + 5
    }

    fn step(&self, state: &ActiveState, params: &SystemParams) -> StepOutput {
        let (n, f) = (params.n, params.f);
        match state.time {
            0 => {
                if state.initial_value {
                    StepOutput::sending(vec![(ProcessId(0), Payload::One)])
                } else {
                    StepOutput::default()
                }
            }
            1 => {
                if state.id == ProcessId(0) && state.count_held(1, Payload::One) == n as usize {
                    StepOutput::sending((0..=f).map(|i| (ProcessId(i), Payload::All1)).collect())
                } else {
                    StepOutput::default()
                }
            }
            2 => {
                if state.id.0 <= f && !state.heard_from_in(2, ProcessId(0)) {
                    StepOutput::sending(broadcast(n, Payload::Err))
                } else {
                    StepOutput::default()
                }
            }
            3 => {
                if state.holds_payload_in(3, Payload::Err) {
                    StepOutput::sending(broadcast(n, Payload::Huh))
                } else {
                    StepOutput::committing()
                }
            }
            t => {
                let heard_huh = state.holds_payload_in(4, Payload::Huh);
                if t == 4 && !heard_huh {
                    return StepOutput::halted();
                }
                let phase = ConsensusPhase {
                    entry_time: 4,
                    tolerance: f - 1,
                };
                if !heard_huh || t > phase.decision_time() {
                    return StepOutput::default();
                }
                let proposal = state.has_committed() || state.holds_payload(Payload::All1);
                phase.step(
                    state,
                    params,
                    ConsensusParams {
                        tolerance: f - 1,
                        proposal,
                    },
                )
            }
        }
    }
}
