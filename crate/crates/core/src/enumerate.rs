//! Exhaustive enumeration of the bounded run universe: every
//! initial-value vector crossed with every admissible crash schedule.
//!
//! Branching is lazy: a crash of process `p` in round `m` only offers
//! the delivery choices over the sends `p` actually prescribes at that
//! point, which depend solely on rounds before `m` and are therefore
//! fixed once earlier branch positions are fixed. Crashes after a
//! process has halted change nothing observable and are canonicalized
//! to "no crash". Order is deterministic: value vectors in binary
//! order, branch positions by (round, process), delivery subsets in
//! bitmask order (prefixes by length).

use std::ops::ControlFlow;

use thiserror::Error;

use crate::kernel::{
    execute, validate_failure_spec, Context, DeliveryChoice, FailureEntry, FailureSpec, IdSet,
    KernelError, ProcessId, Run, SystemParams,
};
use crate::protocols::Protocol;

pub const DEFAULT_BUDGET: u64 = 10_000_000;

/// Predicate over initial-value vectors.
pub type ValueFilter = Box<dyn Fn(&[bool]) -> bool>;

/// Knobs for universe construction.
pub struct EnumerateOptions {
    /// Hard cap on the number of runs; exceeding it aborts enumeration.
    pub budget: u64,
    /// Crash budget, at most `params.f` (which is the default). Zero
    /// restricts the universe to failure-free runs.
    pub max_crashes: Option<u8>,
    /// Restricts which initial-value vectors enter the universe.
    pub value_filter: Option<ValueFilter>,
}

impl Default for EnumerateOptions {
    fn default() -> Self {
        EnumerateOptions {
            budget: DEFAULT_BUDGET,
            max_crashes: None,
            value_filter: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum EnumError {
    #[error("run budget exceeded; first uncounted branch: {at}")]
    Budget { at: String },
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnumSummary {
    pub runs: u64,
    pub stopped_early: bool,
}

/// The enumerated run universe of one protocol under one parameter set.
/// Runs are produced lazily and in a fixed order; iterating twice gives
/// the same sequence.
pub struct RunUniverse<'p> {
    protocol: &'p dyn Protocol,
    params: SystemParams,
    opts: EnumerateOptions,
}

impl<'p> RunUniverse<'p> {
    pub fn new(
        protocol: &'p dyn Protocol,
        params: SystemParams,
        opts: EnumerateOptions,
    ) -> Result<Self, KernelError> {
        params.validate()?;
        protocol
            .check_params(&params)
            .map_err(KernelError::Config)?;
        Ok(RunUniverse {
            protocol,
            params,
            opts,
        })
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn protocol(&self) -> &dyn Protocol {
        self.protocol
    }

    pub fn protocol_name(&self) -> &str {
        self.protocol.name()
    }

    pub fn max_crashes(&self) -> u8 {
        self.opts
            .max_crashes
            .unwrap_or(self.params.f)
            .min(self.params.f)
    }

    /// Visits every run in canonical order. The visitor may break early;
    /// that is not an error.
    pub fn for_each(
        &self,
        visit: &mut dyn FnMut(&Run) -> ControlFlow<()>,
    ) -> Result<EnumSummary, EnumError> {
        let n = self.params.n;
        let mut count = 0u64;
        for k in 0..(1u32 << n) {
            let values: Vec<bool> = (0..n).map(|i| (k >> (n - 1 - i)) & 1 == 1).collect();
            if let Some(filter) = &self.opts.value_filter {
                if !filter(&values) {
                    continue;
                }
            }
            let mut entries = Vec::new();
            if self
                .expand(&values, &mut entries, (1, 0), &mut count, visit)?
                .is_break()
            {
                return Ok(EnumSummary {
                    runs: count,
                    stopped_early: true,
                });
            }
        }
        Ok(EnumSummary {
            runs: count,
            stopped_early: false,
        })
    }

    fn expand(
        &self,
        values: &[bool],
        entries: &mut Vec<FailureEntry>,
        from: (u8, u8),
        count: &mut u64,
        visit: &mut dyn FnMut(&Run) -> ControlFlow<()>,
    ) -> Result<ControlFlow<()>, EnumError> {
        let spec = FailureSpec::new(entries.clone());
        if *count >= self.opts.budget {
            return Err(EnumError::Budget {
                at: format!(
                    "values={} failures={}",
                    values
                        .iter()
                        .map(|&v| if v { '1' } else { '0' })
                        .collect::<String>(),
                    spec
                ),
            });
        }
        let run = execute(self.protocol, values, &spec, &self.params)?;
        *count += 1;
        if visit(&run).is_break() {
            return Ok(ControlFlow::Break(()));
        }
        if entries.len() as u8 >= self.max_crashes() {
            return Ok(ControlFlow::Continue(()));
        }

        for m in from.0..=run.record.rounds_executed {
            let p_from = if m == from.0 { from.1 } else { 0 };
            for p in p_from..self.params.n {
                let pid = ProcessId(p);
                if entries.iter().any(|e| e.process == pid) {
                    continue;
                }
                let log = run.log(pid);
                if log.halted_at.is_some_and(|h| h < m) {
                    continue;
                }
                for delivery in self.delivery_choices(&run, pid, m) {
                    entries.push(FailureEntry {
                        process: pid,
                        crash_round: m,
                        delivery,
                    });
                    let flow = self.expand(values, entries, (m, p + 1), count, visit)?;
                    entries.pop();
                    if flow.is_break() {
                        return Ok(ControlFlow::Break(()));
                    }
                }
            }
        }
        Ok(ControlFlow::Continue(()))
    }

    /// The crash choices at `(p, round m)` given the run so far: exactly
    /// the subsets (or prefixes) of the sends `p` actually prescribes.
    fn delivery_choices(&self, run: &Run, p: ProcessId, m: u8) -> Vec<DeliveryChoice> {
        let record = &run.log(p).base.rounds[m as usize - 1];
        let mut receivers: Vec<ProcessId> = record
            .sends
            .iter()
            .map(|(to, _)| *to)
            .filter(|to| *to != p)
            .collect();
        receivers.sort();
        receivers.dedup();
        match self.params.context {
            Context::GammaF => (0..(1u32 << receivers.len()))
                .map(|mask| {
                    DeliveryChoice::Subset(
                        receivers
                            .iter()
                            .enumerate()
                            .filter(|(k, _)| mask & (1 << k) != 0)
                            .map(|(_, r)| *r)
                            .collect(),
                    )
                })
                .collect(),
            Context::GammaTildeF => {
                let total = receivers.len() as u8;
                let mut choices: Vec<DeliveryChoice> = (0..=total)
                    .map(|len| DeliveryChoice::Prefix {
                        len,
                        decide_before_crash: false,
                    })
                    .collect();
                if record.mid_decision.is_some() {
                    choices.push(DeliveryChoice::Prefix {
                        len: total,
                        decide_before_crash: true,
                    });
                }
                choices
            }
        }
    }

    pub fn cardinality(&self) -> Result<u64, EnumError> {
        Ok(self.for_each(&mut |_| ControlFlow::Continue(()))?.runs)
    }

    /// Materializes the whole universe. Only sensible at small scales.
    pub fn collect(&self) -> Result<Vec<Run>, EnumError> {
        let mut runs = Vec::new();
        self.for_each(&mut |r| {
            runs.push(r.clone());
            ControlFlow::Continue(())
        })?;
        Ok(runs)
    }

    /// Membership lookup by `(initial values, failure schedule)` key.
    /// Returns the run iff the enumeration would produce it: the spec is
    /// valid, within the crash budget, canonical (no crash after the
    /// victim halted), and each delivery choice ranges over sends the
    /// protocol actually prescribes at that point.
    pub fn find(&self, values: &[bool], failures: &FailureSpec) -> Result<Option<Run>, EnumError> {
        if values.len() != self.params.n as usize {
            return Ok(None);
        }
        if let Some(filter) = &self.opts.value_filter {
            if !filter(values) {
                return Ok(None);
            }
        }
        if validate_failure_spec(failures, &self.params).is_err()
            || failures.len() as u8 > self.max_crashes()
        {
            return Ok(None);
        }
        let mut sorted = failures.entries().to_vec();
        sorted.sort_by_key(|e| (e.crash_round, e.process));
        let mut prefix: Vec<FailureEntry> = Vec::new();
        for entry in sorted {
            let run = execute(
                self.protocol,
                values,
                &FailureSpec::new(prefix.clone()),
                &self.params,
            )?;
            if entry.crash_round > run.record.rounds_executed {
                return Ok(None);
            }
            let log = run.log(entry.process);
            if log.halted_at.is_some_and(|h| h < entry.crash_round) {
                return Ok(None);
            }
            let record = &log.base.rounds[entry.crash_round as usize - 1];
            let prescribed: IdSet = record
                .sends
                .iter()
                .map(|(to, _)| *to)
                .filter(|to| *to != entry.process)
                .collect();
            let admissible = match entry.delivery {
                DeliveryChoice::Subset(s) => s.union(prescribed) == prescribed,
                DeliveryChoice::Prefix {
                    len,
                    decide_before_crash,
                } => {
                    len <= prescribed.len()
                        && (!decide_before_crash
                            || (len == prescribed.len() && record.mid_decision.is_some()))
                }
            };
            if !admissible {
                return Ok(None);
            }
            prefix.push(entry);
        }
        Ok(Some(execute(
            self.protocol,
            values,
            failures,
            &self.params,
        )?))
    }
}
