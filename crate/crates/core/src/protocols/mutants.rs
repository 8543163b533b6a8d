//! Deliberately broken protocols, kept so the verification suites can
//! be shown to catch real violations rather than passing vacuously.

use crate::kernel::{ActiveState, Context, SystemParams};
use crate::protocols::{d2, Protocol, StepOutput};

/// Commits at time 0, before any communication. Violates commit
/// validity outright and commits without knowing anything.
#[derive(Clone, Copy, Debug)]
pub struct MutantCommit0;

impl Protocol for MutantCommit0 {
    fn name(&self) -> &str {
        "mutant-commit0"
    }

    fn default_horizon(&self, _f: u8) -> u8 {
        1
    }

    fn default_context(&self) -> Context {
        Context::GammaF
    }

    fn step(&self, _state: &ActiveState, _params: &SystemParams) -> StepOutput {
        let mut out = StepOutput::committing();
        out.halt = true;
        out
    }
}

/// d2 with its cyclic window shrunk from `f + 1` processes to `f`: the
/// silent set no longer guarantees a correct member, so `f` crashes can
/// silence it and let a commit through with a 0 vote in the system.
#[derive(Clone, Copy, Debug)]
pub struct MutantD2Choir;

impl Protocol for MutantD2Choir {
    fn name(&self) -> &str {
        "mutant-d2-choir"
    }

    fn default_horizon(&self, f: u8) -> u8 {
        f + 4
    }

    fn step(&self, state: &ActiveState, params: &SystemParams) -> StepOutput {
        d2::step_with_window(state, params, params.f - 1)
    }
}
