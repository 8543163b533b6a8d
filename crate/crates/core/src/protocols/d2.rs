//! Round-optimal commit at time 2 with `f·n` messages.
//!
//! Each value-1 process covers the cyclic window `{i..i+f}` with its
//! vote in round 1, so every process sits inside `f + 1` windows. A
//! process missing any of its `f + 1` expected votes (its own counts)
//! broadcasts `err` in round 2; silence in round 2 is a commit at
//! time 2. An `err` triggers round-3 broadcasts of who was heard from,
//! then biased-to-1 consensus from round 4, deciding at time `f + 3`.

use crate::kernel::{ActiveState, DecisionAction, IdSet, Payload, SystemParams};
use crate::protocols::consensus::{ConsensusParams, ConsensusPhase};
use crate::protocols::{broadcast, Protocol, StepOutput};

#[derive(Clone, Copy, Debug)]
pub struct D2;

impl Protocol for D2 {
    fn name(&self) -> &str {
        "d2"
    }

    fn default_horizon(&self, f: u8) -> u8 {
        f + 4
    }

    fn step(&self, state: &ActiveState, params: &SystemParams) -> StepOutput {
        step_with_window(state, params, params.f)
    }
}

/// The d2 step with an explicit window size: a vote in round 1 goes to
/// `{i..i+window}` and round 2 expects `window + 1` votes. The real
/// protocol uses `window = f`; the choir mutant shrinks it by one.
pub(crate) fn step_with_window(
    state: &ActiveState,
    params: &SystemParams,
    window: u8,
) -> StepOutput {
    let (n, f) = (params.n, params.f);
    match state.time {
        0 => {
            if state.initial_value {
                StepOutput::sending(
                    (0..=window)
                        .map(|k| (state.id.cyclic_add(k, n), Payload::One))
                        .collect(),
                )
            } else {
                StepOutput::default()
            }
        }
        1 => {
            if state.count_held(1, Payload::One) < window as usize + 1 {
                StepOutput::sending(broadcast(n, Payload::Err))
            } else {
                StepOutput::default()
            }
        }
        2 => {
            if state.holds_payload_in(2, Payload::Err) {
                let heard: IdSet = state
                    .held_in_round(1)
                    .filter(|(_, p)| *p == Payload::One)
                    .map(|(s, _)| s)
                    .collect();
                StepOutput::sending(broadcast(n, Payload::Ids { ids: heard }))
            } else {
                StepOutput {
                    boundary_decision: Some(DecisionAction::Commit),
                    ..Default::default()
                }
            }
        }
        t => {
            let entered = state.held_in_round(3).next().is_some();
            if t == 3 && !entered {
                return StepOutput::halted();
            }
            let phase = ConsensusPhase {
                entry_time: 3,
                tolerance: f - 1,
            };
            if !entered || t > phase.decision_time() {
                return StepOutput::default();
            }
            let covered = state
                .held_in_round(3)
                .filter_map(|(_, p)| match p {
                    Payload::Ids { ids } => Some(ids),
                    _ => None,
                })
                .fold(IdSet::EMPTY, IdSet::union);
            let proposal = state.has_committed() || covered == IdSet::full(n);
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
