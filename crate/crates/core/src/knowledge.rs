//! Facts about runs and the knowledge operator `K_i`, evaluated by
//! literal indistinguishability over an enumerated universe.
//!
//! `K_i φ` holds at `(run, time m)` iff `φ` is true of every universe
//! member whose local state for `i` at `m` equals the query run's. The
//! suites below avoid quadratic rescans by bucketing runs per
//! `(process, time, state)` in one pass and AND-ing the tracked facts
//! per bucket; a second pass then reads each run's own buckets.

use std::collections::HashMap;
use std::fmt;
use std::ops::ControlFlow;

use thiserror::Error;

use crate::analysis::{earliest_arrivals, SuiteReport, ViolationClass};
use crate::enumerate::{EnumError, RunUniverse};
use crate::kernel::{DecisionAction, IdSet, KernelError, ProcessId, Run, RunRecord};

/// An evaluable predicate over complete runs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Fact {
    /// All initial values are 1.
    All1,
    /// Process `j` started with the given value.
    ValueIs(ProcessId, bool),
    /// Process `j` crashes in this run.
    IsFaulty(ProcessId),
    /// A message chain from `(j, 0)` reaches some process that never
    /// crashes.
    ChainToCorrect(ProcessId),
    Not(Box<Fact>),
    And(Box<Fact>, Box<Fact>),
    Or(Box<Fact>, Box<Fact>),
}

impl fmt::Display for Fact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fact::All1 => write!(f, "all1"),
            Fact::ValueIs(j, b) => write!(f, "val {j} {}", *b as u8),
            Fact::IsFaulty(j) => write!(f, "faulty {j}"),
            Fact::ChainToCorrect(j) => write!(f, "chaincorrect {j}"),
            Fact::Not(a) => write!(f, "not({a})"),
            Fact::And(a, b) => write!(f, "and({a},{b})"),
            Fact::Or(a, b) => write!(f, "or({a},{b})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("bad fact expression: {0}")]
pub struct FactParseError(pub String);

impl Fact {
    /// Parses the prefix grammar: `all1`, `val j 1`, `faulty j`,
    /// `chaincorrect j`, `not(...)`, `and(...,...)`, `or(...,...)`.
    pub fn parse(input: &str) -> Result<Fact, FactParseError> {
        let mut p = FactParser { rest: input };
        let fact = p.expr()?;
        p.skip_ws();
        if !p.rest.is_empty() {
            return Err(FactParseError(format!("trailing input: {:?}", p.rest)));
        }
        Ok(fact)
    }
}

struct FactParser<'a> {
    rest: &'a str,
}

impl FactParser<'_> {
    fn skip_ws(&mut self) {
        self.rest = self.rest.trim_start();
    }

    fn word(&mut self) -> Result<&str, FactParseError> {
        self.skip_ws();
        let end = self
            .rest
            .char_indices()
            .find(|(_, c)| !c.is_ascii_alphanumeric())
            .map_or(self.rest.len(), |(i, _)| i);
        if end == 0 {
            return Err(FactParseError(format!(
                "expected a term at {:?}",
                self.rest
            )));
        }
        let (w, rest) = self.rest.split_at(end);
        self.rest = rest;
        Ok(w)
    }

    fn number(&mut self) -> Result<u8, FactParseError> {
        let w = self.word()?;
        w.parse()
            .map_err(|_| FactParseError(format!("expected a number, got {w:?}")))
    }

    fn expect(&mut self, c: char) -> Result<(), FactParseError> {
        self.skip_ws();
        if self.rest.starts_with(c) {
            self.rest = &self.rest[c.len_utf8()..];
            Ok(())
        } else {
            Err(FactParseError(format!("expected {c:?} at {:?}", self.rest)))
        }
    }

    fn expr(&mut self) -> Result<Fact, FactParseError> {
        match self.word()? {
            "all1" => Ok(Fact::All1),
            "val" => {
                let j = self.number()?;
                let b = self.number()?;
                if b > 1 {
                    return Err(FactParseError(format!("value must be 0 or 1, got {b}")));
                }
                Ok(Fact::ValueIs(ProcessId(j), b == 1))
            }
            "faulty" => Ok(Fact::IsFaulty(ProcessId(self.number()?))),
            "chaincorrect" => Ok(Fact::ChainToCorrect(ProcessId(self.number()?))),
            op @ ("not" | "and" | "or") => {
                let op = op.to_string();
                self.expect('(')?;
                let a = self.expr()?;
                let fact = if op == "not" {
                    Fact::Not(Box::new(a))
                } else {
                    self.expect(',')?;
                    let b = self.expr()?;
                    if op == "and" {
                        Fact::And(Box::new(a), Box::new(b))
                    } else {
                        Fact::Or(Box::new(a), Box::new(b))
                    }
                };
                self.expect(')')?;
                Ok(fact)
            }
            w => Err(FactParseError(format!("unknown fact {w:?}"))),
        }
    }
}

/// Evaluates a fact on a complete run. Total: ids outside the system
/// evaluate to false.
pub fn fact_eval(run: &RunRecord, fact: &Fact) -> bool {
    match fact {
        Fact::All1 => run.initial_values.iter().all(|&v| v),
        Fact::ValueIs(j, b) => run.initial_values.get(j.index()).is_some_and(|v| v == b),
        Fact::IsFaulty(j) => run.faulty().contains(*j),
        Fact::ChainToCorrect(j) => {
            if j.index() >= run.params.n as usize {
                return false;
            }
            earliest_arrivals(run, *j, 0)
                .iter()
                .enumerate()
                .any(|(h, a)| a.is_some() && run.is_correct(ProcessId(h as u8)))
        }
        Fact::Not(a) => !fact_eval(run, a),
        Fact::And(a, b) => fact_eval(run, a) && fact_eval(run, b),
        Fact::Or(a, b) => fact_eval(run, a) || fact_eval(run, b),
    }
}

/// True iff `i` cannot tell the two runs apart at time `m`: its local
/// states are equal, with ⊥ equal only to ⊥.
pub fn indistinguishable(
    run_a: &Run,
    run_b: &Run,
    i: ProcessId,
    m: u8,
) -> Result<bool, KernelError> {
    Ok(run_a.local_state(i, m)? == run_b.local_state(i, m)?)
}

#[derive(Debug, Error)]
pub enum KnowledgeError {
    #[error("state of p{process} at time {time} is ⊥ (crashed); knowledge is undefined there")]
    CrashedState { process: ProcessId, time: u8 },
    #[error("query run does not belong to the universe: {0}")]
    RunMismatch(String),
    #[error(transparent)]
    Enum(#[from] EnumError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KnowsAnswer {
    pub holds: bool,
    /// How many indistinguishable universe members were scanned.
    pub scanned: u64,
}

/// Evaluates `K_i fact` at time `m` of `run`, relative to `universe`.
/// The whole universe is scanned; the answer is the conjunction of the
/// fact over every indistinguishable member.
pub fn knows(
    universe: &RunUniverse,
    run: &Run,
    i: ProcessId,
    m: u8,
    fact: &Fact,
) -> Result<KnowsAnswer, KnowledgeError> {
    if universe.params() != &run.record.params || universe.protocol_name() != run.record.protocol {
        return Err(KnowledgeError::RunMismatch(format!(
            "universe is {} {:?}, run is {} {:?}",
            universe.protocol_name(),
            universe.params(),
            run.record.protocol,
            run.record.params
        )));
    }
    let state = run.local_state(i, m)?;
    if state.is_crashed() {
        return Err(KnowledgeError::CrashedState {
            process: i,
            time: m,
        });
    }
    let mut key = Vec::new();
    state_key(run, i, m, &mut key);

    let mut probe = Vec::new();
    let mut holds = true;
    let mut scanned = 0u64;
    universe.for_each(&mut |candidate| {
        let log = candidate.log(i);
        if log.crashed_in.is_none_or(|c| m < c) {
            probe.clear();
            state_key(candidate, i, m, &mut probe);
            if probe == key {
                scanned += 1;
                if !fact_eval(&candidate.record, fact) {
                    holds = false;
                }
            }
        }
        ControlFlow::Continue(())
    })?;
    Ok(KnowsAnswer { holds, scanned })
}

/// Canonical bucket key `(i, m, state bytes)` for a live state.
fn state_key(run: &Run, i: ProcessId, m: u8, out: &mut Vec<u8>) {
    let (bytes, offsets) = run.log(i).encode_prefixes(run.record.params.horizon);
    out.push(i.0);
    out.push(m);
    out.extend_from_slice(&bytes[..offsets[m as usize]]);
}

/// One bucketing pass over a universe: for every `(process, time,
/// local state)` key, the AND of the tracked facts over all runs in the
/// bucket. `K_i(tracked[k])` then holds at `(run, i, m)` iff bit `k`
/// survives in the run's own bucket.
pub struct KnowledgeIndex {
    tracked: Vec<Fact>,
    buckets: HashMap<Vec<u8>, u32>,
    pub runs: u64,
}

impl KnowledgeIndex {
    pub fn build(universe: &RunUniverse, tracked: Vec<Fact>) -> Result<Self, EnumError> {
        assert!(tracked.len() <= 32, "at most 32 tracked facts");
        let horizon = universe.params().horizon;
        let n = universe.params().n;
        let mut buckets: HashMap<Vec<u8>, u32> = HashMap::new();
        let mut key = Vec::with_capacity(64);
        let summary = universe.for_each(&mut |run| {
            let mut mask = 0u32;
            for (k, fact) in tracked.iter().enumerate() {
                if fact_eval(&run.record, fact) {
                    mask |= 1 << k;
                }
            }
            for i in 0..n {
                let log = run.log(ProcessId(i));
                let (bytes, offsets) = log.encode_prefixes(horizon);
                for (m, &end) in offsets.iter().enumerate() {
                    key.clear();
                    key.push(i);
                    key.push(m as u8);
                    key.extend_from_slice(&bytes[..end]);
                    match buckets.get_mut(key.as_slice()) {
                        Some(slot) => *slot &= mask,
                        None => {
                            buckets.insert(key.clone(), mask);
                        }
                    }
                }
            }
            ControlFlow::Continue(())
        })?;
        Ok(KnowledgeIndex {
            tracked,
            buckets,
            runs: summary.runs,
        })
    }

    pub fn tracked(&self) -> &[Fact] {
        &self.tracked
    }

    /// Whether `K_i(tracked[fact_idx])` holds at `(i, m)` in this run.
    /// The state must be live and the run a universe member.
    pub fn knows_at(&self, run: &Run, i: ProcessId, m: u8, fact_idx: usize) -> bool {
        let mut key = Vec::with_capacity(64);
        state_key(run, i, m, &mut key);
        let mask = self.buckets.get(key.as_slice()).copied();
        debug_assert!(
            mask.is_some(),
            "probed a state outside the indexed universe"
        );
        mask.is_some_and(|m| m & (1 << fact_idx) != 0)
    }

    /// The surviving fact bits for process `i` of `run` at every live
    /// time `0..=limit`, probing each state once.
    pub fn masks_for(&self, run: &Run, i: ProcessId) -> Vec<u32> {
        let (bytes, offsets) = run.log(i).encode_prefixes(run.record.params.horizon);
        let mut key = Vec::with_capacity(64);
        offsets
            .iter()
            .enumerate()
            .map(|(m, &end)| {
                key.clear();
                key.push(i.0);
                key.push(m as u8);
                key.extend_from_slice(&bytes[..end]);
                let mask = self.buckets.get(key.as_slice()).copied();
                debug_assert!(
                    mask.is_some(),
                    "probed a state outside the indexed universe"
                );
                mask.unwrap_or(0)
            })
            .collect()
    }
}

/// Finds one universe member indistinguishable from `(run, i, m)` in
/// which `fact` fails. Used to complete violation witnesses.
fn find_falsifier(
    universe: &RunUniverse,
    run: &Run,
    i: ProcessId,
    m: u8,
    fact: &Fact,
) -> Result<Option<String>, EnumError> {
    let mut key = Vec::new();
    state_key(run, i, m, &mut key);
    let mut probe = Vec::new();
    let mut found = None;
    universe.for_each(&mut |candidate| {
        let log = candidate.log(i);
        if log.crashed_in.is_none_or(|c| m < c) {
            probe.clear();
            state_key(candidate, i, m, &mut probe);
            if probe == key && !fact_eval(&candidate.record, fact) {
                found = Some(candidate.record.key_string());
                return ControlFlow::Break(());
            }
        }
        ControlFlow::Continue(())
    })?;
    Ok(found)
}

/// Checks that every commit in the universe is backed by knowledge:
/// whenever process `i` commits at time `m`, `K_i all1` holds there.
pub fn check_commit_knowledge(universe: &RunUniverse) -> Result<SuiteReport, KnowledgeError> {
    let index = KnowledgeIndex::build(universe, vec![Fact::All1])?;
    let mut class = ViolationClass::new("commit-knowledge");
    let mut first: Option<(Run, ProcessId, u8)> = None;
    universe.for_each(&mut |run| {
        for (p, d) in &run.record.decisions {
            if d.action == DecisionAction::Commit && !index.knows_at(run, *p, d.time, 0) {
                class.record(format!(
                    "{} :: p{p} committed at {} without knowing all1",
                    run.record.key_string(),
                    d.time
                ));
                if first.is_none() {
                    first = Some((run.clone(), *p, d.time));
                }
            }
        }
        ControlFlow::Continue(())
    })?;
    if let Some((run, p, m)) = first {
        if let Some(other) = find_falsifier(universe, &run, p, m, &Fact::All1)? {
            let w = class.first_witness.get_or_insert_with(String::new);
            w.push_str(&format!(
                " (indistinguishable from {other}, where all1 fails)"
            ));
        }
    }
    Ok(SuiteReport {
        suite: format!("commit-knowledge {}", universe.protocol_name()),
        runs_checked: index.runs,
        classes: vec![class],
    })
}

/// Checks the silent-choir condition across the whole universe: for
/// every run, live `(i, m)` and process `j`, if `K_i(v_j = 1)` holds
/// with no message chain `(j,0)` to `(i,m)`, then `m > 0` and the
/// faulty set together with `j`'s reach set at `m - 1` exceeds `f`.
pub fn check_silent_choir(universe: &RunUniverse) -> Result<SuiteReport, KnowledgeError> {
    let params = *universe.params();
    let n = params.n;
    let tracked: Vec<Fact> = (0..n).map(|j| Fact::ValueIs(ProcessId(j), true)).collect();
    let index = KnowledgeIndex::build(universe, tracked)?;
    let mut class = ViolationClass::new("silent-choir");
    let mut knowledge_points = 0u64;
    universe.for_each(&mut |run| {
        let rec = &run.record;
        let faulty = rec.faulty();
        let arrivals: Vec<Vec<Option<u8>>> =
            (0..n).map(|j| earliest_arrivals(rec, ProcessId(j), 0)).collect();
        for i in 0..n {
            let pid = ProcessId(i);
            let masks = index.masks_for(run, pid);
            for (m, mask) in masks.iter().enumerate() {
                let m = m as u8;
                for j in 0..n {
                    if mask & (1 << j) == 0 {
                        continue;
                    }
                    knowledge_points += 1;
                    let chain = arrivals[j as usize][i as usize].is_some_and(|t| t <= m);
                    if chain {
                        continue;
                    }
                    let reach: IdSet = if m == 0 {
                        IdSet::EMPTY
                    } else {
                        arrivals[j as usize]
                            .iter()
                            .enumerate()
                            .filter(|(_, a)| a.is_some_and(|t| t < m))
                            .map(|(h, _)| ProcessId(h as u8))
                            .collect()
                    };
                    let choir = reach.union(faulty);
                    if !(m > 0 && choir.len() > params.f) {
                        class.record(format!(
                            "{} :: K_{i}(v_{j}=1) at time {m} with no chain, choir {choir} size {} <= f={}",
                            rec.key_string(),
                            choir.len(),
                            params.f
                        ));
                    }
                }
            }
        }
        ControlFlow::Continue(())
    })?;
    Ok(SuiteReport {
        suite: format!(
            "silent-choir {} ({knowledge_points} knowledge points)",
            universe.protocol_name()
        ),
        runs_checked: index.runs,
        classes: vec![class],
    })
}

/// A declared silent-broadcast instance.
///
/// `senders` is the set whose collective round-`round` silence conveys
/// `phi` (sound only when the set outnumbers the crash budget).
/// `singletons` lists, per individual sender, the weaker fact whose
/// disjunction with "that sender is faulty" its lone silence conveys —
/// what the sender itself must know whenever it chooses to stay quiet.
#[derive(Clone, Debug)]
pub struct LemmaInstance {
    pub phi: Fact,
    pub senders: IdSet,
    pub round: u8,
    pub singletons: Vec<(ProcessId, Fact)>,
}

/// The declared instance for each protocol.
///
/// The `stealth` choir member `j` is silent in round 3 iff it holds the
/// relay's `all1`; a `d1f1`/`d15` process skips its round-2 `huh` iff
/// it saw every vote. Both give per-sender facts equal to `all1`. A
/// `d2` process is silent in round 2 iff its own cyclic vote window
/// `{j-f..j}` arrived intact, so its lone silence certifies only that
/// window; `all1` emerges from the silence of the whole set.
pub fn lemma_instance_for(protocol: &str, f: u8, n: u8) -> Option<LemmaInstance> {
    let all1_singletons =
        |senders: IdSet| senders.iter().map(|j| (j, Fact::All1)).collect::<Vec<_>>();
    match protocol {
        "stealth" => {
            let senders: IdSet = (0..=f).map(ProcessId).collect();
            Some(LemmaInstance {
                phi: Fact::All1,
                senders,
                round: 3,
                singletons: all1_singletons(senders),
            })
        }
        "d1f1" | "d15" => {
            let senders = IdSet::full(n);
            Some(LemmaInstance {
                phi: Fact::All1,
                senders,
                round: 2,
                singletons: all1_singletons(senders),
            })
        }
        "d2" => {
            let window_fact = |j: ProcessId| {
                (1..=f)
                    .map(|k| Fact::ValueIs(j.cyclic_sub(k, n), true))
                    .fold(Fact::ValueIs(j, true), |acc, v| {
                        Fact::And(Box::new(acc), Box::new(v))
                    })
            };
            Some(LemmaInstance {
                phi: Fact::All1,
                senders: IdSet::full(n),
                round: 2,
                singletons: (0..n).map(ProcessId).map(|j| (j, window_fact(j))).collect(),
            })
        }
        _ => None,
    }
}

#[derive(Clone, Debug)]
pub struct LemmaReport {
    pub report: SuiteReport,
    /// A point where the singleton silence condition held but plain
    /// `K_i phi` failed — evidence that a single unreliable source is
    /// weaker than a set larger than `f`.
    pub singleton_knowledge_gap: Option<String>,
}

/// Checks silent-broadcast inferences for a declared instance.
///
/// * set rule: if `i` holds no round-`round` message from any member of
///   `senders` (its own broadcast counts), then `K_i phi` at that time;
/// * singleton rule: if `i` holds no round-`round` message from a
///   single declared sender `j` with fact `phi_j`, then
///   `K_i(phi_j or j is faulty)`.
pub fn check_lemma_suite(
    universe: &RunUniverse,
    instance: &LemmaInstance,
) -> Result<LemmaReport, KnowledgeError> {
    let params = *universe.params();
    let m = instance.round;
    let mut tracked = vec![instance.phi.clone()];
    for (j, phi_j) in &instance.singletons {
        tracked.push(Fact::Or(
            Box::new(phi_j.clone()),
            Box::new(Fact::IsFaulty(*j)),
        ));
    }
    let index = KnowledgeIndex::build(universe, tracked)?;

    let mut set_class = ViolationClass::new("silent-broadcast-set");
    let mut singleton_class = ViolationClass::new("silent-inference-singleton");
    let mut gap: Option<String> = None;
    universe.for_each(&mut |run| {
        for i in 0..params.n {
            let pid = ProcessId(i);
            let log = run.log(pid);
            if log.crashed_in.is_some_and(|c| m >= c) {
                continue;
            }
            let held: IdSet = match log.base.rounds.get(m as usize - 1) {
                None => IdSet::EMPTY,
                Some(r) => r
                    .receipts
                    .iter()
                    .map(|(s, _)| *s)
                    .chain(r.sends.iter().filter(|(to, _)| *to == pid).map(|_| pid))
                    .collect(),
            };
            if (held.0 & instance.senders.0) == 0 && !index.knows_at(run, pid, m, 0) {
                set_class.record(format!(
                    "{} :: p{i} heard nothing from {} in round {m} yet lacks K({})",
                    run.record.key_string(),
                    instance.senders,
                    instance.phi
                ));
            }
            for (jx, (j, phi_j)) in instance.singletons.iter().enumerate() {
                if held.contains(*j) {
                    continue;
                }
                if !index.knows_at(run, pid, m, 1 + jx) {
                    singleton_class.record(format!(
                        "{} :: p{i} heard nothing from p{j} in round {m} yet lacks K({phi_j} or faulty {j})",
                        run.record.key_string(),
                    ));
                }
                if gap.is_none() && !index.knows_at(run, pid, m, 0) {
                    gap = Some(format!(
                        "{} :: p{i} heard nothing from p{j} in round {m} and indeed lacks plain K({})",
                        run.record.key_string(),
                        instance.phi
                    ));
                }
            }
        }
        ControlFlow::Continue(())
    })?;

    Ok(LemmaReport {
        report: SuiteReport {
            suite: format!("silent-broadcast {}", universe.protocol_name()),
            runs_checked: index.runs,
            classes: vec![set_class, singleton_class],
        },
        singleton_knowledge_gap: gap,
    })
}

/// A witness that silence did real work: a pair `(i, j)` where `i`
/// knows `v_j = 1` at its commit time without any message chain from
/// `j`, in a run whose message count sits below the no-silence floor
/// `2n - 2`.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize)]
pub struct SilenceWitness {
    pub i: ProcessId,
    pub j: ProcessId,
    pub time: u8,
    pub messages: usize,
    pub no_silence_bound: usize,
}

/// Searches one run for a silence witness among its commit events.
pub fn silence_witness(
    universe: &RunUniverse,
    run: &Run,
) -> Result<Option<SilenceWitness>, KnowledgeError> {
    let rec = &run.record;
    let n = rec.params.n;
    for (p, d) in &rec.decisions {
        if d.action != DecisionAction::Commit {
            continue;
        }
        let arrivals_to_p: Vec<Vec<Option<u8>>> = (0..n)
            .map(|j| earliest_arrivals(rec, ProcessId(j), 0))
            .collect();
        for j in (0..n).map(ProcessId) {
            if j == *p || arrivals_to_p[j.index()][p.index()].is_some_and(|t| t <= d.time) {
                continue;
            }
            if knows(universe, run, *p, d.time, &Fact::ValueIs(j, true))?.holds {
                return Ok(Some(SilenceWitness {
                    i: *p,
                    j,
                    time: d.time,
                    messages: rec.messages.len(),
                    no_silence_bound: 2 * n as usize - 2,
                }));
            }
        }
    }
    Ok(None)
}
