//! Round-based execution engine for synchronous crash-failure systems.
//!
//! Time is a global discrete clock starting at 0; round `m` spans time
//! `m-1` to `m`. Within round `m` the engine runs four phases:
//!
//! 1. every live process computes its prescribed sends from its state at
//!    time `m-1` (the step function was evaluated at the previous
//!    boundary and its output stashed);
//! 2. sends execute — a process crashing in round `m` delivers only the
//!    subset (or prefix) its [`DeliveryChoice`] allows, and mid-round
//!    decisions execute after the sends they follow;
//! 3. deliveries land at time `m`;
//! 4. boundary decisions and halts at time `m` execute for processes
//!    that neither crashed nor halted, based on their time-`m` state.
//!
//! Self-addressed sends are virtual: they surface in the sender's local
//! state (so a broadcast counts as heard by its own sender) but are never
//! recorded in the message log and never counted.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocols::{Protocol, StepOutput};

/// Identifier of a process in `{0, 1, ..., n-1}`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProcessId(pub u8);

impl ProcessId {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// `self + k` wrapping modulo `n`.
    pub fn cyclic_add(self, k: u8, n: u8) -> ProcessId {
        ProcessId(((self.0 as u16 + k as u16) % n as u16) as u8)
    }

    /// `self - k` wrapping modulo `n`.
    pub fn cyclic_sub(self, k: u8, n: u8) -> ProcessId {
        let n = n as u16;
        ProcessId(((self.0 as u16 + n - (k as u16 % n)) % n) as u8)
    }
}

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Debug for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

/// A set of process ids kept as a bitmask; `n` is capped at 32.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(into = "Vec<u8>", try_from = "Vec<u8>")]
pub struct IdSet(pub u32);

impl IdSet {
    pub const EMPTY: IdSet = IdSet(0);

    pub fn full(n: u8) -> IdSet {
        IdSet(if n >= 32 { u32::MAX } else { (1u32 << n) - 1 })
    }

    pub fn insert(&mut self, p: ProcessId) {
        self.0 |= 1 << p.0;
    }

    pub fn contains(self, p: ProcessId) -> bool {
        self.0 & (1 << p.0) != 0
    }

    pub fn len(self) -> u8 {
        self.0.count_ones() as u8
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn union(self, other: IdSet) -> IdSet {
        IdSet(self.0 | other.0)
    }

    pub fn iter(self) -> impl Iterator<Item = ProcessId> {
        (0..32u8)
            .filter(move |b| self.0 & (1 << b) != 0)
            .map(ProcessId)
    }
}

impl FromIterator<ProcessId> for IdSet {
    fn from_iter<T: IntoIterator<Item = ProcessId>>(iter: T) -> Self {
        let mut s = IdSet::EMPTY;
        for p in iter {
            s.insert(p);
        }
        s
    }
}

impl From<IdSet> for Vec<u8> {
    fn from(s: IdSet) -> Vec<u8> {
        s.iter().map(|p| p.0).collect()
    }
}

impl TryFrom<Vec<u8>> for IdSet {
    type Error = String;

    fn try_from(ids: Vec<u8>) -> Result<Self, String> {
        let mut s = IdSet::EMPTY;
        for id in ids {
            if id >= 32 {
                return Err(format!("process id {id} out of range"));
            }
            s.insert(ProcessId(id));
        }
        Ok(s)
    }
}

impl fmt::Display for IdSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, p) in self.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{p}")?;
        }
        write!(f, "}}")
    }
}

impl fmt::Debug for IdSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Failure semantics for the crash round.
///
/// Under `GammaF` a crashing process delivers an arbitrary subset of the
/// sends it was about to perform. Under `GammaTildeF` a send action that
/// was performed is guaranteed to complete, so the adversary instead
/// picks a crash point within the process's ordered send sequence.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Context {
    GammaF,
    GammaTildeF,
}

impl fmt::Display for Context {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Context::GammaF => write!(f, "gamma-f"),
            Context::GammaTildeF => write!(f, "gamma-tilde-f"),
        }
    }
}

/// Static parameters of a system: process count, crash budget, failure
/// context and the round bound for bounded execution.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash, Serialize, Deserialize)]
pub struct SystemParams {
    pub n: u8,
    pub f: u8,
    pub context: Context,
    pub horizon: u8,
}

impl SystemParams {
    pub fn new(n: u8, f: u8, context: Context, horizon: u8) -> Result<Self, KernelError> {
        let p = SystemParams {
            n,
            f,
            context,
            horizon,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        if self.n <= 2 || self.n > 32 {
            return Err(KernelError::InvalidParams(format!(
                "n must be in 3..=32, got {}",
                self.n
            )));
        }
        if self.f == 0 || self.f >= self.n {
            return Err(KernelError::InvalidParams(format!(
                "f must satisfy 1 <= f < n, got f={} n={}",
                self.f, self.n
            )));
        }
        if self.horizon == 0 {
            return Err(KernelError::InvalidParams("horizon must be >= 1".into()));
        }
        Ok(())
    }

    pub fn process_ids(&self) -> impl Iterator<Item = ProcessId> {
        (0..self.n).map(ProcessId)
    }
}

/// Message content. Each tag is a single bit on the wire; distinct tags
/// are kept in traces for readability. `Ids` carries a bit vector of
/// length `n` listing processes whose value-1 vote reached the sender.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug, Hash, Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "snake_case")]
pub enum Payload {
    One,
    All1,
    Err,
    Huh,
    #[serde(rename = "c1")]
    ConsensusOne,
    Ids {
        ids: IdSet,
    },
}

impl Payload {
    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            Payload::One => out.push(1),
            Payload::All1 => out.push(2),
            Payload::Err => out.push(3),
            Payload::Huh => out.push(4),
            Payload::ConsensusOne => out.push(5),
            Payload::Ids { ids } => {
                out.push(6);
                out.extend_from_slice(&ids.0.to_le_bytes());
            }
        }
    }
}

impl fmt::Display for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Payload::One => write!(f, "one"),
            Payload::All1 => write!(f, "all1"),
            Payload::Err => write!(f, "err"),
            Payload::Huh => write!(f, "huh"),
            Payload::ConsensusOne => write!(f, "c1"),
            Payload::Ids { ids } => write!(f, "ids{ids}"),
        }
    }
}

/// The two decision actions of atomic commitment.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionAction {
    Commit,
    Abort,
}

impl fmt::Display for DecisionAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecisionAction::Commit => write!(f, "commit"),
            DecisionAction::Abort => write!(f, "abort"),
        }
    }
}

/// A message that was actually sent over the network, delivered at the
/// end of its round. Self-sends are virtual and never recorded.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug, Serialize, Deserialize)]
pub struct MessageRecord {
    pub round: u8,
    pub sender: ProcessId,
    pub receiver: ProcessId,
    pub payload: Payload,
}

/// What the adversary lets a crashing process deliver in its crash round.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug, Hash, Serialize, Deserialize)]
pub enum DeliveryChoice {
    /// `GammaF`: the subset of prescribed receivers that still get their
    /// message. Receivers outside the prescription are ignored.
    Subset(IdSet),
    /// `GammaTildeF`: the process completes the first `len` sends of its
    /// prescribed sequence (receivers in ascending id order), then
    /// crashes. `decide_before_crash` lets a prescribed mid-round
    /// decision execute first; it requires the full prefix.
    Prefix { len: u8, decide_before_crash: bool },
}

impl fmt::Display for DeliveryChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DeliveryChoice::Subset(s) => write!(f, "deliver{s}"),
            DeliveryChoice::Prefix {
                len,
                decide_before_crash,
            } => {
                write!(
                    f,
                    "prefix {len}{}",
                    if *decide_before_crash { "+d" } else { "" }
                )
            }
        }
    }
}

/// One crash: which process, in which round, and what still gets out.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash, Serialize, Deserialize)]
pub struct FailureEntry {
    pub process: ProcessId,
    pub crash_round: u8,
    pub delivery: DeliveryChoice,
}

impl fmt::Display for FailureEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "p{}@r{} {}",
            self.process, self.crash_round, self.delivery
        )
    }
}

/// An adversary schedule: at most `f` crashes, one per process.
#[derive(Clone, PartialEq, Eq, Debug, Hash, Default, Serialize, Deserialize)]
pub struct FailureSpec {
    entries: Vec<FailureEntry>,
}

impl FailureSpec {
    pub const NONE: FailureSpec = FailureSpec {
        entries: Vec::new(),
    };

    /// Builds a spec with entries in canonical (process id) order.
    pub fn new(mut entries: Vec<FailureEntry>) -> FailureSpec {
        entries.sort_by_key(|e| e.process);
        FailureSpec { entries }
    }

    pub fn entries(&self) -> &[FailureEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn crash_round_of(&self, p: ProcessId) -> Option<u8> {
        self.entries
            .iter()
            .find(|e| e.process == p)
            .map(|e| e.crash_round)
    }

    pub fn entry_for(&self, p: ProcessId) -> Option<&FailureEntry> {
        self.entries.iter().find(|e| e.process == p)
    }

    /// The set of faulty processes.
    pub fn faulty(&self) -> IdSet {
        self.entries.iter().map(|e| e.process).collect()
    }
}

impl fmt::Display for FailureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.entries.is_empty() {
            return write!(f, "none");
        }
        for (k, e) in self.entries.iter().enumerate() {
            if k > 0 {
                write!(f, ";")?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

/// Why a failure spec was rejected.
#[derive(Clone, PartialEq, Eq, Debug, Error)]
pub enum FailureViolation {
    #[error("{0} faulty entries exceed f = {1}")]
    ExceedsF(usize, u8),
    #[error("process {0} appears more than once")]
    Duplicate(ProcessId),
    #[error("process {0} out of range for n = {1}")]
    UnknownProcess(ProcessId, u8),
    #[error("crash round {round} for process {process} outside 1..={horizon}")]
    BadRound {
        process: ProcessId,
        round: u8,
        horizon: u8,
    },
    #[error("delivery choice does not match context {0}")]
    ContextMismatch(Context),
    #[error(
        "decide_before_crash requires the full send prefix (prefix {len} < {prescribed} sends)"
    )]
    PartialPrefixDecision { len: u8, prescribed: u8 },
}

/// Checks the static invariants of a failure spec against the system
/// parameters. Violations are the return value, not an error.
pub fn validate_failure_spec(
    spec: &FailureSpec,
    params: &SystemParams,
) -> Result<(), FailureViolation> {
    if spec.entries.len() > params.f as usize {
        return Err(FailureViolation::ExceedsF(spec.entries.len(), params.f));
    }
    let mut seen = IdSet::EMPTY;
    for e in &spec.entries {
        if e.process.0 >= params.n {
            return Err(FailureViolation::UnknownProcess(e.process, params.n));
        }
        if seen.contains(e.process) {
            return Err(FailureViolation::Duplicate(e.process));
        }
        seen.insert(e.process);
        if e.crash_round == 0 || e.crash_round > params.horizon {
            return Err(FailureViolation::BadRound {
                process: e.process,
                round: e.crash_round,
                horizon: params.horizon,
            });
        }
        let matches = matches!(
            (params.context, &e.delivery),
            (Context::GammaF, DeliveryChoice::Subset(_))
                | (Context::GammaTildeF, DeliveryChoice::Prefix { .. })
        );
        if !matches {
            return Err(FailureViolation::ContextMismatch(params.context));
        }
    }
    Ok(())
}

/// A decision as recorded in a run: the action, the time it carries, and
/// whether it was taken mid-round (after that round's sends) rather than
/// at a round boundary.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub action: DecisionAction,
    pub time: u8,
    pub mid_round: bool,
}

/// Everything a process did and observed in one round.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct RoundRecord {
    /// Prescribed sends, including virtual self-targets.
    pub sends: Vec<(ProcessId, Payload)>,
    /// Decision taken after this round's sends (carries time `round-1`).
    pub mid_decision: Option<DecisionAction>,
    /// Network deliveries at the end of the round, sorted by sender.
    pub receipts: Vec<(ProcessId, Payload)>,
    /// Decision taken at the end of the round.
    pub boundary_decision: Option<DecisionAction>,
    /// Whether the process halted at the end of the round.
    pub halted: bool,
}

/// The local state of a live process: its id, initial value, the current
/// time, and the chronological record of what it did and saw. At time 0
/// it has the form `(v, 0, {})`.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ActiveState {
    pub id: ProcessId,
    pub initial_value: bool,
    pub time: u8,
    /// Decision/halt at time 0, before any round (unused by the real
    /// protocols; the commit-at-time-0 mutant exercises it).
    pub start_decision: Option<DecisionAction>,
    pub start_halt: bool,
    /// `rounds[k]` is the record of round `k+1`.
    pub rounds: Vec<RoundRecord>,
}

impl ActiveState {
    pub fn round(&self, m: u8) -> Option<&RoundRecord> {
        if m == 0 {
            return None;
        }
        self.rounds.get(m as usize - 1)
    }

    /// Messages held from round `m`: network receipts plus the process's
    /// own virtual self-deliveries (a broadcast counts as heard by its
    /// sender).
    pub fn held_in_round(&self, m: u8) -> impl Iterator<Item = (ProcessId, Payload)> + '_ {
        let id = self.id;
        self.round(m).into_iter().flat_map(move |r| {
            r.receipts.iter().copied().chain(
                r.sends
                    .iter()
                    .filter(move |(to, _)| *to == id)
                    .map(move |(_, p)| (id, *p)),
            )
        })
    }

    /// True iff some message from `j` (virtual self-sends included) was
    /// held from round `m`.
    pub fn heard_from_in(&self, m: u8, j: ProcessId) -> bool {
        self.held_in_round(m).any(|(s, _)| s == j)
    }

    pub fn count_held(&self, m: u8, payload: Payload) -> usize {
        self.held_in_round(m).filter(|(_, p)| *p == payload).count()
    }

    pub fn holds_payload_in(&self, m: u8, payload: Payload) -> bool {
        self.held_in_round(m).any(|(_, p)| p == payload)
    }

    /// True iff `payload` was held in any round up to the current time.
    pub fn holds_payload(&self, payload: Payload) -> bool {
        (1..=self.rounds.len() as u8).any(|m| self.holds_payload_in(m, payload))
    }

    /// The process's decision so far, with its time and mid-round flag.
    pub fn decided(&self) -> Option<DecisionRecord> {
        if let Some(action) = self.start_decision {
            return Some(DecisionRecord {
                action,
                time: 0,
                mid_round: false,
            });
        }
        for (k, r) in self.rounds.iter().enumerate() {
            if let Some(action) = r.mid_decision {
                return Some(DecisionRecord {
                    action,
                    time: k as u8,
                    mid_round: true,
                });
            }
            if let Some(action) = r.boundary_decision {
                return Some(DecisionRecord {
                    action,
                    time: k as u8 + 1,
                    mid_round: false,
                });
            }
        }
        None
    }

    pub fn has_committed(&self) -> bool {
        matches!(
            self.decided(),
            Some(DecisionRecord {
                action: DecisionAction::Commit,
                ..
            })
        )
    }
}

/// A process's view of a run: ⊥ once it has crashed, its full state
/// otherwise.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum LocalState {
    /// ⊥ — compares equal only to ⊥.
    Crashed,
    Active(ActiveState),
}

impl LocalState {
    pub fn is_crashed(&self) -> bool {
        matches!(self, LocalState::Crashed)
    }

    pub fn active(&self) -> Option<&ActiveState> {
        match self {
            LocalState::Crashed => None,
            LocalState::Active(s) => Some(s),
        }
    }
}

/// Full per-process log kept by a run. `base.rounds` stops at the crash
/// or halt; states at later times are the frozen history with the clock
/// advanced, or ⊥ after a crash.
#[derive(Clone, PartialEq, Eq, Debug)]
pub(crate) struct ProcessLog {
    pub(crate) base: ActiveState,
    pub(crate) crashed_in: Option<u8>,
    pub(crate) halted_at: Option<u8>,
}

impl ProcessLog {
    pub(crate) fn state_at(&self, m: u8) -> LocalState {
        if self.crashed_in.is_some_and(|c| m >= c) {
            return LocalState::Crashed;
        }
        let mut s = self.base.clone();
        s.rounds.truncate(m as usize);
        s.time = m;
        LocalState::Active(s)
    }

    /// Canonical byte encoding of the local-state history up to
    /// `horizon`, with `offsets[m]` giving the prefix length that
    /// encodes the state at time `m`. The time itself is excluded (key
    /// builders carry it); a frozen state shares the bytes of its halt
    /// time. Offsets stop before the crash round.
    pub(crate) fn encode_prefixes(&self, horizon: u8) -> (Vec<u8>, Vec<usize>) {
        let s = &self.base;
        let mut out = Vec::with_capacity(16 + 12 * s.rounds.len());
        out.push(s.initial_value as u8);
        out.push(encode_decision(s.start_decision));
        out.push(s.start_halt as u8);
        let last = match self.crashed_in {
            Some(c) => c - 1,
            None => horizon,
        };
        let mut offsets = Vec::with_capacity(last as usize + 1);
        offsets.push(out.len());
        for m in 1..=last {
            if let Some(r) = s.rounds.get(m as usize - 1) {
                out.push(0xAA);
                out.push(r.sends.len() as u8);
                for (to, p) in &r.sends {
                    out.push(to.0);
                    p.encode(&mut out);
                }
                out.push(encode_decision(r.mid_decision));
                out.push(r.receipts.len() as u8);
                for (from, p) in &r.receipts {
                    out.push(from.0);
                    p.encode(&mut out);
                }
                out.push(encode_decision(r.boundary_decision));
                out.push(r.halted as u8);
            }
            offsets.push(out.len());
        }
        (out, offsets)
    }
}

fn encode_decision(d: Option<DecisionAction>) -> u8 {
    match d {
        None => 0,
        Some(DecisionAction::Commit) => 1,
        Some(DecisionAction::Abort) => 2,
    }
}

/// The serializable heart of a run: everything needed for trace I/O and
/// analysis. Local state reconstruction additionally needs the [`Run`]
/// that owns the per-process logs.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct RunRecord {
    pub protocol: String,
    pub params: SystemParams,
    pub initial_values: Vec<bool>,
    pub failures: FailureSpec,
    /// Delivered messages, sorted by (round, sender, receiver).
    pub messages: Vec<MessageRecord>,
    pub decisions: BTreeMap<ProcessId, DecisionRecord>,
    pub halts: BTreeMap<ProcessId, u8>,
    /// Last round that was actually executed.
    pub rounds_executed: u8,
}

impl RunRecord {
    pub fn faulty(&self) -> IdSet {
        self.failures.faulty()
    }

    pub fn is_correct(&self, p: ProcessId) -> bool {
        !self.failures.faulty().contains(p)
    }

    pub fn values_string(&self) -> String {
        self.initial_values
            .iter()
            .map(|&v| if v { '1' } else { '0' })
            .collect()
    }

    /// Short human-readable key naming the run within its universe.
    pub fn key_string(&self) -> String {
        format!("values={} failures={}", self.values_string(), self.failures)
    }
}

/// A complete execution record: the run data plus per-process local
/// state histories addressable by `(process, time)`.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Run {
    pub record: RunRecord,
    pub(crate) logs: Vec<ProcessLog>,
}

impl Run {
    /// The local state of process `i` at time `m`; ⊥ if `i` crashed in a
    /// round `<= m`.
    pub fn local_state(&self, i: ProcessId, m: u8) -> Result<LocalState, KernelError> {
        if m > self.record.params.horizon {
            return Err(KernelError::TimeOutOfRange {
                time: m,
                horizon: self.record.params.horizon,
            });
        }
        Ok(self.logs[i.index()].state_at(m))
    }

    pub(crate) fn log(&self, i: ProcessId) -> &ProcessLog {
        &self.logs[i.index()]
    }
}

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid failure spec: {0}")]
    InvalidFailure(#[from] FailureViolation),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("internal consistency fault: {0}")]
    InternalFault(String),
    #[error("time {time} beyond recorded horizon {horizon}")]
    TimeOutOfRange { time: u8, horizon: u8 },
}

struct Proc {
    state: ActiveState,
    crashed_in: Option<u8>,
    halted_at: Option<u8>,
    decision: Option<DecisionRecord>,
    /// Output of the step evaluated at the last boundary: sends and
    /// mid-round decision for the upcoming round.
    pending: Option<StepOutput>,
}

/// Executes `protocol` on the given inputs and returns the unique run
/// they determine. Execution stops when every process has halted or
/// crashed, or at the horizon.
pub fn execute(
    protocol: &dyn Protocol,
    initial_values: &[bool],
    failures: &FailureSpec,
    params: &SystemParams,
) -> Result<Run, KernelError> {
    params.validate()?;
    protocol.check_params(params).map_err(KernelError::Config)?;
    if initial_values.len() != params.n as usize {
        return Err(KernelError::InvalidParams(format!(
            "expected {} initial values, got {}",
            params.n,
            initial_values.len()
        )));
    }
    validate_failure_spec(failures, params)?;

    let n = params.n;
    let mut procs: Vec<Proc> = (0..n)
        .map(|i| Proc {
            state: ActiveState {
                id: ProcessId(i),
                initial_value: initial_values[i as usize],
                time: 0,
                start_decision: None,
                start_halt: false,
                rounds: Vec::new(),
            },
            crashed_in: None,
            halted_at: None,
            decision: None,
            pending: None,
        })
        .collect();
    let mut messages: Vec<MessageRecord> = Vec::new();

    // Time-0 boundary: evaluate the step once to prime round-1 sends and
    // apply any (mutant) time-0 decision.
    for proc in procs.iter_mut() {
        let out = protocol.step(&proc.state, params);
        apply_boundary(proc, out, 0)?;
        proc.state.start_decision = proc.decision.map(|d| d.action);
        proc.state.start_halt = proc.halted_at == Some(0);
    }

    let mut rounds_executed = 0;
    for m in 1..=params.horizon {
        let all_settled = procs
            .iter()
            .all(|p| p.crashed_in.is_some() || p.halted_at.is_some());
        // A crash scheduled for a process that already halted still
        // flips its state to ⊥ and must be carried out; only then can
        // execution stop early.
        let crash_pending = failures
            .entries()
            .iter()
            .any(|e| e.crash_round >= m && procs[e.process.index()].crashed_in.is_none());
        if all_settled && !crash_pending {
            break;
        }
        rounds_executed = m;

        // Phases 1-2: collect performed sends, applying crash filtering.
        let mut performed: Vec<(ProcessId, ProcessId, Payload)> = Vec::new();
        for i in 0..n {
            let proc = &mut procs[i as usize];
            if proc.crashed_in.is_some() {
                continue;
            }
            if proc.halted_at.is_some() {
                if failures
                    .entry_for(ProcessId(i))
                    .is_some_and(|e| e.crash_round == m)
                {
                    proc.crashed_in = Some(m);
                }
                continue;
            }
            let out = proc.pending.take().unwrap_or_default();
            let crash = failures
                .entry_for(ProcessId(i))
                .filter(|e| e.crash_round == m)
                .copied();
            match crash {
                None => {
                    for &(to, p) in &out.sends {
                        if to.0 >= n {
                            return Err(KernelError::InternalFault(format!(
                                "send target {to} out of range"
                            )));
                        }
                        performed.push((ProcessId(i), to, p));
                    }
                    let mut record = RoundRecord {
                        sends: out.sends,
                        ..Default::default()
                    };
                    if let Some(action) = out.mid_round_decision {
                        record_decision(proc, action, m - 1, true)?;
                        record.mid_decision = Some(action);
                    }
                    proc.state.rounds.push(record);
                }
                Some(entry) => {
                    let kept = crash_round_sends(&out, &entry, params)?;
                    for &(to, p) in &kept {
                        performed.push((ProcessId(i), to, p));
                    }
                    if let DeliveryChoice::Prefix {
                        decide_before_crash: true,
                        ..
                    } = entry.delivery
                    {
                        if let Some(action) = out.mid_round_decision {
                            record_decision(proc, action, m - 1, true)?;
                        }
                    }
                    proc.crashed_in = Some(m);
                }
            }
        }

        // Phase 3: deliveries. Network sends go to the log and, when the
        // receiver is still live and not halted, into its receipts.
        // Virtual self-sends only surface through the sender's own
        // round record.
        for (from, to, payload) in performed {
            if from == to {
                continue;
            }
            messages.push(MessageRecord {
                round: m,
                sender: from,
                receiver: to,
                payload,
            });
            let rcv = &mut procs[to.index()];
            if rcv.crashed_in.is_none() && rcv.halted_at.is_none() {
                rcv.state.rounds[m as usize - 1]
                    .receipts
                    .push((from, payload));
            }
        }
        for proc in procs.iter_mut() {
            if let Some(r) = proc.state.rounds.get_mut(m as usize - 1) {
                r.receipts.sort();
            }
        }

        // Phase 4: boundary decisions and halts at time m.
        for proc in procs.iter_mut() {
            if proc.crashed_in.is_some() || proc.halted_at.is_some() {
                continue;
            }
            proc.state.time = m;
            let out = protocol.step(&proc.state, params);
            let boundary = apply_boundary(proc, out, m)?;
            let record = proc.state.rounds.last_mut().expect("round record exists");
            record.boundary_decision = boundary;
            record.halted = proc.halted_at == Some(m);
        }
    }

    let mut decisions = BTreeMap::new();
    let mut halts = BTreeMap::new();
    let mut logs = Vec::with_capacity(n as usize);
    for proc in procs {
        if let Some(d) = proc.decision {
            decisions.insert(proc.state.id, d);
        }
        if let Some(h) = proc.halted_at {
            halts.insert(proc.state.id, h);
        }
        logs.push(ProcessLog {
            base: proc.state,
            crashed_in: proc.crashed_in,
            halted_at: proc.halted_at,
        });
    }
    messages.sort();

    Ok(Run {
        record: RunRecord {
            protocol: protocol.name().to_string(),
            params: *params,
            initial_values: initial_values.to_vec(),
            failures: failures.clone(),
            messages,
            decisions,
            halts,
            rounds_executed,
        },
        logs,
    })
}

/// Applies the crash-round delivery choice to the prescribed sends,
/// returning what still goes out (virtual self-sends are dropped — a
/// crashing process has no future state to observe them).
fn crash_round_sends(
    out: &StepOutput,
    entry: &FailureEntry,
    params: &SystemParams,
) -> Result<Vec<(ProcessId, Payload)>, KernelError> {
    let network: Vec<(ProcessId, Payload)> = {
        let mut v: Vec<_> = out
            .sends
            .iter()
            .copied()
            .filter(|(to, _)| *to != entry.process)
            .collect();
        v.sort_by_key(|(to, _)| *to);
        v
    };
    match entry.delivery {
        DeliveryChoice::Subset(allowed) => {
            debug_assert_eq!(params.context, Context::GammaF);
            Ok(network
                .into_iter()
                .filter(|(to, _)| allowed.contains(*to))
                .collect())
        }
        DeliveryChoice::Prefix {
            len,
            decide_before_crash,
        } => {
            debug_assert_eq!(params.context, Context::GammaTildeF);
            let prescribed = network.len() as u8;
            if decide_before_crash && len < prescribed {
                return Err(FailureViolation::PartialPrefixDecision { len, prescribed }.into());
            }
            Ok(network.into_iter().take(len as usize).collect())
        }
    }
}

fn record_decision(
    proc: &mut Proc,
    action: DecisionAction,
    time: u8,
    mid_round: bool,
) -> Result<(), KernelError> {
    if let Some(prev) = proc.decision {
        return Err(KernelError::InternalFault(format!(
            "process {} decided twice: {} at {} then {} at {}",
            proc.state.id, prev.action, prev.time, action, time
        )));
    }
    proc.decision = Some(DecisionRecord {
        action,
        time,
        mid_round,
    });
    Ok(())
}

/// Applies the boundary parts of a step output at time `m` and stashes
/// the send parts for the next round. Returns the boundary decision.
fn apply_boundary(
    proc: &mut Proc,
    out: StepOutput,
    m: u8,
) -> Result<Option<DecisionAction>, KernelError> {
    if out.boundary_decision.is_some() && out.mid_round_decision.is_some() {
        return Err(KernelError::InternalFault(format!(
            "process {} prescribed two decisions in one step",
            proc.state.id
        )));
    }
    if out.halt && (!out.sends.is_empty() || out.mid_round_decision.is_some()) {
        return Err(KernelError::InternalFault(format!(
            "halted process {} prescribed further actions",
            proc.state.id
        )));
    }
    let boundary = out.boundary_decision;
    if let Some(action) = boundary {
        record_decision(proc, action, m, false)?;
    }
    if out.halt {
        proc.halted_at = Some(m);
        proc.pending = None;
    } else {
        proc.pending = Some(StepOutput {
            sends: out.sends,
            mid_round_decision: out.mid_round_decision,
            boundary_decision: None,
            halt: false,
        });
    }
    Ok(boundary)
}
