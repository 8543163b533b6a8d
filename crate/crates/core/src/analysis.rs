//! Causality and complexity analysis over runs: message chains, reach
//! sets, silent-choir verdicts, message-count bounds, metrics and
//! atomic-commitment verdicts.
//!
//! A message chain from `(i, m)` to `(i', m')` is either the same
//! process with `m <= m'`, or a sequence of messages with strictly
//! increasing send times, the first sent no earlier than `m` and the
//! last delivered by `m'`. Chains are over sent messages; whether the
//! receiver was still alive to look at one does not matter.

use std::ops::ControlFlow;

use serde::Serialize;

use crate::enumerate::{EnumError, RunUniverse};
use crate::kernel::{DecisionAction, DecisionRecord, IdSet, ProcessId, RunRecord};

/// Earliest chain arrival times from `(from, from_time)` to every
/// process: entry `h` is the least `t` with a chain `(from, from_time)`
/// to `(h, t)`, or `None` if no chain exists within the run.
pub fn earliest_arrivals(run: &RunRecord, from: ProcessId, from_time: u8) -> Vec<Option<u8>> {
    let mut arrival: Vec<Option<u8>> = vec![None; run.params.n as usize];
    arrival[from.index()] = Some(from_time);
    // Messages are sorted by round; a message sent at time `round - 1`
    // extends a chain iff its sender was reached by then, so one pass in
    // round order reaches the fixpoint.
    for msg in &run.messages {
        if let Some(t) = arrival[msg.sender.index()] {
            if t < msg.round {
                let slot = &mut arrival[msg.receiver.index()];
                if slot.is_none_or(|cur| cur > msg.round) {
                    *slot = Some(msg.round);
                }
            }
        }
    }
    arrival
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChainQuery {
    pub from: (ProcessId, u8),
    pub to: (ProcessId, u8),
}

/// True iff the run contains a message chain from `q.from` to `q.to`.
pub fn message_chain_exists(run: &RunRecord, q: &ChainQuery) -> bool {
    let (j, mj) = q.from;
    let (i, mi) = q.to;
    earliest_arrivals(run, j, mj)[i.index()].is_some_and(|t| t <= mi)
}

/// The processes reachable from `(j, 0)` by time `t`; always contains
/// `j` itself.
pub fn reach_set(run: &RunRecord, j: ProcessId, t: u8) -> IdSet {
    earliest_arrivals(run, j, 0)
        .iter()
        .enumerate()
        .filter(|(_, a)| a.is_some_and(|a| a <= t))
        .map(|(h, _)| ProcessId(h as u8))
        .collect()
}

/// Verdict of the silent-choir condition for "`i` learned `v_j = 1` by
/// time `m`": either an explicit chain from `(j, 0)` reaches `(i, m)`,
/// or `m > 0` and the faulty set together with `j`'s reach set at
/// `m - 1` exceeds `f` — silence then has a correct voice behind it.
#[derive(Clone, Debug, Serialize, PartialEq, Eq)]
pub struct ChoirVerdict {
    pub chain_exists: bool,
    pub reach_set: IdSet,
    pub faulty_set: IdSet,
    pub choir_size: u8,
    pub satisfies_theorem: bool,
}

pub fn silent_choir_check(run: &RunRecord, i: ProcessId, j: ProcessId, m: u8) -> ChoirVerdict {
    let chain_exists = message_chain_exists(
        run,
        &ChainQuery {
            from: (j, 0),
            to: (i, m),
        },
    );
    let reach = if m == 0 {
        IdSet::EMPTY
    } else {
        reach_set(run, j, m - 1)
    };
    let faulty = run.faulty();
    let choir_size = reach.union(faulty).len();
    ChoirVerdict {
        chain_exists,
        reach_set: reach,
        faulty_set: faulty,
        choir_size,
        satisfies_theorem: chain_exists || (m > 0 && choir_size > run.params.f),
    }
}

/// Message-count bound check: when every process has chains to at least
/// `k` others, the run must carry at least `n + k - 1` messages.
#[derive(Clone, Copy, Debug, Serialize, PartialEq, Eq)]
pub struct RankBoundCheck {
    pub applicable: bool,
    pub message_count: usize,
    pub bound_holds: bool,
}

pub fn rank_bound_check(run: &RunRecord, k: u8) -> RankBoundCheck {
    let applicable = k > 0 && min_chain_out_degree(run) >= k;
    let message_count = run.messages.len();
    RankBoundCheck {
        applicable,
        message_count,
        bound_holds: applicable && message_count >= run.params.n as usize + k as usize - 1,
    }
}

/// The least, over processes `j`, number of *other* processes that a
/// chain from `(j, 0)` reaches within the run.
pub fn min_chain_out_degree(run: &RunRecord) -> u8 {
    (0..run.params.n)
        .map(|j| reach_set(run, ProcessId(j), run.params.horizon).len() - 1)
        .min()
        .unwrap_or(0)
}

#[derive(Clone, Debug, Serialize, PartialEq, Eq)]
pub struct Metrics {
    pub messages: usize,
    /// Indexed by process id; `None` for processes that never decided.
    pub decision_times: Vec<Option<DecisionRecord>>,
    pub halt_times: Vec<Option<u8>>,
}

pub fn metrics(run: &RunRecord) -> Metrics {
    let n = run.params.n as usize;
    let mut decision_times = vec![None; n];
    let mut halt_times = vec![None; n];
    for (p, d) in &run.decisions {
        decision_times[p.index()] = Some(*d);
    }
    for (p, h) in &run.halts {
        halt_times[p.index()] = Some(*h);
    }
    Metrics {
        messages: run.messages.len(),
        decision_times,
        halt_times,
    }
}

/// Pass/fail with a witness naming processes and times from the run.
#[derive(Clone, Debug, Serialize, PartialEq, Eq)]
pub struct ConditionVerdict {
    pub pass: bool,
    pub witness: Option<String>,
}

impl ConditionVerdict {
    fn pass() -> Self {
        ConditionVerdict {
            pass: true,
            witness: None,
        }
    }

    fn fail(witness: String) -> Self {
        ConditionVerdict {
            pass: false,
            witness: Some(witness),
        }
    }
}

/// The four atomic-commitment conditions evaluated on one run. Decision
/// is judged as "decided by the horizon" for processes that never crash.
#[derive(Clone, Debug, Serialize, PartialEq, Eq)]
pub struct AcVerdict {
    pub agreement: ConditionVerdict,
    pub commit_validity: ConditionVerdict,
    pub abort_validity: ConditionVerdict,
    pub decision: ConditionVerdict,
}

impl AcVerdict {
    pub fn all_pass(&self) -> bool {
        self.agreement.pass
            && self.commit_validity.pass
            && self.abort_validity.pass
            && self.decision.pass
    }
}

pub fn ac_verdict(run: &RunRecord) -> AcVerdict {
    let agreement = {
        let mut verdict = ConditionVerdict::pass();
        let mut first: Option<(ProcessId, &DecisionRecord)> = None;
        for (p, d) in &run.decisions {
            match first {
                None => first = Some((*p, d)),
                Some((q, e)) if e.action != d.action => {
                    verdict = ConditionVerdict::fail(format!(
                        "p{q} {} at {} vs p{p} {} at {}",
                        e.action, e.time, d.action, d.time
                    ));
                    break;
                }
                _ => {}
            }
        }
        verdict
    };

    let commit_validity = run
        .decisions
        .iter()
        .find(|(_, d)| d.action == DecisionAction::Commit)
        .and_then(|(p, d)| {
            run.initial_values.iter().position(|&v| !v).map(|z| {
                ConditionVerdict::fail(format!("p{p} committed at {} but v_{z}=0", d.time))
            })
        })
        .unwrap_or_else(ConditionVerdict::pass);

    let abort_validity = run
        .decisions
        .iter()
        .find(|(_, d)| d.action == DecisionAction::Abort)
        .filter(|_| run.initial_values.iter().all(|&v| v) && run.failures.is_empty())
        .map(|(p, d)| {
            ConditionVerdict::fail(format!(
                "p{p} aborted at {} in a run with all values 1 and no failures",
                d.time
            ))
        })
        .unwrap_or_else(ConditionVerdict::pass);

    let decision = run
        .params
        .process_ids()
        .find(|p| run.is_correct(*p) && !run.decisions.contains_key(p))
        .map(|p| ConditionVerdict::fail(format!("correct p{p} undecided by the horizon")))
        .unwrap_or_else(ConditionVerdict::pass);

    AcVerdict {
        agreement,
        commit_validity,
        abort_validity,
        decision,
    }
}

/// One class of violations within a suite: a count plus the first
/// witness seen.
#[derive(Clone, Debug, Serialize, PartialEq, Eq)]
pub struct ViolationClass {
    pub name: String,
    pub violations: u64,
    pub first_witness: Option<String>,
}

impl ViolationClass {
    pub fn new(name: &str) -> Self {
        ViolationClass {
            name: name.to_string(),
            violations: 0,
            first_witness: None,
        }
    }

    pub fn record(&mut self, witness: String) {
        self.violations += 1;
        if self.first_witness.is_none() {
            self.first_witness = Some(witness);
        }
    }
}

/// Outcome of a property suite over a whole universe.
#[derive(Clone, Debug, Serialize, PartialEq, Eq)]
pub struct SuiteReport {
    pub suite: String,
    pub runs_checked: u64,
    pub classes: Vec<ViolationClass>,
}

impl SuiteReport {
    pub fn total_violations(&self) -> u64 {
        self.classes.iter().map(|c| c.violations).sum()
    }

    pub fn clean(&self) -> bool {
        self.total_violations() == 0
    }
}

/// Checks the four atomic-commitment conditions on every run of the
/// universe.
pub fn check_ac_universe(universe: &RunUniverse) -> Result<SuiteReport, EnumError> {
    let mut classes = [
        ViolationClass::new("agreement"),
        ViolationClass::new("commit-validity"),
        ViolationClass::new("abort-validity"),
        ViolationClass::new("decision"),
    ];
    let summary = universe.for_each(&mut |run| {
        let verdict = ac_verdict(&run.record);
        let key = run.record.key_string();
        for (class, cond) in classes.iter_mut().zip([
            &verdict.agreement,
            &verdict.commit_validity,
            &verdict.abort_validity,
            &verdict.decision,
        ]) {
            if !cond.pass {
                class.record(format!(
                    "{key} :: {}",
                    cond.witness.as_deref().unwrap_or("")
                ));
            }
        }
        ControlFlow::Continue(())
    })?;
    Ok(SuiteReport {
        suite: format!("ac {}", universe.protocol_name()),
        runs_checked: summary.runs,
        classes: classes.into(),
    })
}

/// Checks the `n + k - 1` message bound for every enumerated run and
/// every applicable `k <= n - 1`.
pub fn check_rank_bounds(universe: &RunUniverse) -> Result<SuiteReport, EnumError> {
    let n = universe.params().n;
    let mut class = ViolationClass::new("rank-bound");
    let summary = universe.for_each(&mut |run| {
        let top = min_chain_out_degree(&run.record).min(n - 1);
        for k in 1..=top {
            let check = rank_bound_check(&run.record, k);
            if check.applicable && !check.bound_holds {
                class.record(format!(
                    "{} :: {} messages < n+k-1 = {} for k={k}",
                    run.record.key_string(),
                    check.message_count,
                    n as usize + k as usize - 1
                ));
            }
        }
        ControlFlow::Continue(())
    })?;
    Ok(SuiteReport {
        suite: format!("rank-bound {}", universe.protocol_name()),
        runs_checked: summary.runs,
        classes: vec![class],
    })
}
