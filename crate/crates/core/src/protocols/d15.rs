//! Mid-round commit at time 1, for the context where crash-round sends
//! are guaranteed to complete.
//!
//! Round 1 is all-to-all value-1 votes. A process holding all `n` votes
//! opens round 2 by sending `all1` to its `f` cyclic successors and then
//! commits mid-round, still at time 1 — the completed sends guarantee a
//! correct witness of `all1` even if it crashes immediately after.
//! Everyone else broadcasts `huh`; silence in round 2 means halt at
//! time 2, otherwise biased-to-1 consensus runs from round 3 and decides
//! at time `f + 2`.

use crate::kernel::{ActiveState, Context, DecisionAction, Payload, SystemParams};
use crate::protocols::consensus::{ConsensusParams, ConsensusPhase};
use crate::protocols::{broadcast, Protocol, StepOutput};

#[derive(Clone, Copy, Debug)]
pub struct D15;

impl Protocol for D15 {
    fn name(&self) -> &str {
        "d15"
    }

    fn default_horizon(&self, f: u8) -> u8 {
        f + 4
    }

    fn default_context(&self) -> Context {
        Context::GammaTildeF
    }

    fn check_params(&self, params: &SystemParams) -> Result<(), String> {
        if params.context != Context::GammaTildeF {
            return Err("d15 is only sound when crash-round sends complete (gamma-tilde-f)".into());
        }
        Ok(())
    }

    fn step(&self, state: &ActiveState, params: &SystemParams) -> StepOutput {
        let (n, f) = (params.n, params.f);
        match state.time {
            0 => {
                if state.initial_value {
                    StepOutput::sending(broadcast(n, Payload::One))
                } else {
                    StepOutput::default()
                }
            }
            1 => {
                if state.count_held(1, Payload::One) == n as usize {
                    let mut sends: Vec<_> = (1..=f)
                        .map(|k| (state.id.cyclic_add(k, n), Payload::All1))
                        .collect();
                    sends.sort_by_key(|(to, _)| *to);
                    StepOutput {
                        sends,
                        mid_round_decision: Some(DecisionAction::Commit),
                        ..Default::default()
                    }
                } else {
                    StepOutput::sending(broadcast(n, Payload::Huh))
                }
            }
            t => {
                let heard_huh = state.holds_payload_in(2, Payload::Huh);
                if t == 2 && !heard_huh {
                    return StepOutput::halted();
                }
                let phase = ConsensusPhase {
                    entry_time: 2,
                    tolerance: f - 1,
                };
                if !heard_huh || t > phase.decision_time() {
                    return StepOutput::default();
                }
                let proposal = state.has_committed() || state.holds_payload_in(2, Payload::All1);
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
