//! Biased-to-1 uniform consensus by value flooding.
//!
//! The commit protocols fall back on a consensus subroutine whose
//! contract is: Validity (a value decided was proposed), uniform
//! Agreement, Decision by sub-round `tolerance + 1`, and Biased-to-1 (if
//! a correct process proposes 1, every decision is 1). The realization
//! here floods the single bit: a process broadcasts '1' in the first
//! sub-round after it first holds a '1' (its own proposal counts), and
//! at the end of sub-round `tolerance + 1` decides 1 iff it ever held
//! one. With at most `tolerance` crashes some sub-round is crash-free,
//! after which all live processes hold the same bit.

use crate::analysis::{SuiteReport, ViolationClass};
use crate::enumerate::{EnumError, EnumerateOptions, RunUniverse};
use crate::kernel::{ActiveState, Context, DecisionAction, Payload, SystemParams};
use crate::protocols::{broadcast, Protocol, StepOutput};

/// Parameters of one consensus invocation: the crash count it must
/// tolerate (the protocols invoke it with `f - 1`) and the proposal.
/// `tolerance + 1` sub-rounds are used.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ConsensusParams {
    pub tolerance: u8,
    pub proposal: bool,
}

/// A consensus sub-phase embedded in a host protocol. Proposals are
/// fixed at `entry_time`; sub-round `s` is round `entry_time + s`; the
/// decision lands at `entry_time + tolerance + 1`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConsensusPhase {
    pub entry_time: u8,
    pub tolerance: u8,
}

impl ConsensusPhase {
    pub(crate) fn decision_time(&self) -> u8 {
        self.entry_time + self.tolerance + 1
    }

    /// Step of a participating process at `state.time >= entry_time`.
    pub(crate) fn step(
        &self,
        state: &ActiveState,
        params: &SystemParams,
        c: ConsensusParams,
    ) -> StepOutput {
        debug_assert_eq!(c.tolerance, self.tolerance);
        let t = state.time;
        let last = self.decision_time();
        let first_held = if c.proposal {
            Some(self.entry_time)
        } else {
            (self.entry_time + 1..=t.min(last))
                .find(|&r| state.holds_payload_in(r, Payload::ConsensusOne))
        };

        let mut out = StepOutput::default();
        if first_held == Some(t) && t < last {
            out.sends = broadcast(params.n, Payload::ConsensusOne);
        }
        if t == last {
            out.halt = true;
            out.sends.clear();
            if !state.has_committed() {
                out.boundary_decision = Some(if first_held.is_some() {
                    DecisionAction::Commit
                } else {
                    DecisionAction::Abort
                });
            }
        }
        out
    }
}

/// The consensus subroutine as a standalone protocol, for checking its
/// contract in isolation. Initial values are the proposals; decide-1 is
/// recorded as commit and decide-0 as abort.
#[derive(Clone, Copy, Debug)]
pub struct B1Consensus {
    pub tolerance: u8,
}

impl Protocol for B1Consensus {
    fn name(&self) -> &str {
        "b1-consensus"
    }

    fn default_horizon(&self, _f: u8) -> u8 {
        self.tolerance + 1
    }

    fn check_params(&self, params: &SystemParams) -> Result<(), String> {
        if params.horizon < self.tolerance + 1 {
            return Err(format!(
                "b1-consensus with tolerance {} needs horizon >= {}",
                self.tolerance,
                self.tolerance + 1
            ));
        }
        Ok(())
    }

    fn step(&self, state: &ActiveState, params: &SystemParams) -> StepOutput {
        let phase = ConsensusPhase {
            entry_time: 0,
            tolerance: self.tolerance,
        };
        if state.time > phase.decision_time() {
            return StepOutput::default();
        }
        phase.step(
            state,
            params,
            ConsensusParams {
                tolerance: self.tolerance,
                proposal: state.initial_value,
            },
        )
    }
}

/// Exhaustively checks the consensus contract for one `(n, tolerance)`
/// pair: every proposal vector crossed with every crash schedule of at
/// most `tolerance` crashes.
pub fn check_b1_properties(n: u8, tolerance: u8, budget: u64) -> Result<SuiteReport, EnumError> {
    let protocol = B1Consensus { tolerance };
    let params = SystemParams {
        n,
        f: tolerance.max(1),
        context: Context::GammaF,
        horizon: tolerance + 1,
    };
    let universe = RunUniverse::new(
        &protocol,
        params,
        EnumerateOptions {
            max_crashes: Some(tolerance),
            budget,
            ..Default::default()
        },
    )
    .map_err(EnumError::Kernel)?;

    let mut validity = ViolationClass::new("validity");
    let mut agreement = ViolationClass::new("uniform-agreement");
    let mut decision = ViolationClass::new("decision");
    let mut biased = ViolationClass::new("biased-to-1");
    let summary = universe.for_each(&mut |run| {
        let rec = &run.record;
        let decided_one = |a: DecisionAction| a == DecisionAction::Commit;
        for (p, d) in &rec.decisions {
            let value = decided_one(d.action);
            let proposed: Vec<bool> = rec.initial_values.clone();
            if value && !proposed.contains(&true) {
                validity.record(format!(
                    "{} p{p} decided 1, nobody proposed 1",
                    rec.key_string()
                ));
            }
            if !value && !proposed.contains(&false) {
                validity.record(format!(
                    "{} p{p} decided 0, nobody proposed 0",
                    rec.key_string()
                ));
            }
            if d.time > tolerance + 1 {
                decision.record(format!(
                    "{} p{p} decided at {} past sub-round {}",
                    rec.key_string(),
                    d.time,
                    tolerance + 1
                ));
            }
        }
        let mut kinds = rec.decisions.values().map(|d| d.action);
        if let Some(first) = kinds.next() {
            if kinds.any(|a| a != first) {
                agreement.record(format!("{} split decision", rec.key_string()));
            }
        }
        for p in params.process_ids() {
            if rec.is_correct(p) && !rec.decisions.contains_key(&p) {
                decision.record(format!("{} correct p{p} never decided", rec.key_string()));
            }
        }
        let correct_one = params
            .process_ids()
            .any(|p| rec.is_correct(p) && rec.initial_values[p.index()]);
        if correct_one {
            for (p, d) in &rec.decisions {
                if !decided_one(d.action) {
                    biased.record(format!(
                        "{} p{p} decided 0 despite a correct 1-proposer",
                        rec.key_string()
                    ));
                }
            }
        }
        std::ops::ControlFlow::Continue(())
    })?;

    Ok(SuiteReport {
        suite: format!("b1-consensus n={n} tolerance={tolerance}"),
        runs_checked: summary.runs,
        classes: vec![validity, agreement, decision, biased],
    })
}
