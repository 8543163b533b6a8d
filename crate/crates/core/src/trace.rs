//! Canonical trace I/O.
//!
//! A trace is a JSON document `{params, initial_values, failures,
//! messages[], decisions{}, halts{}}` with messages sorted by
//! `(round, sender, receiver)`. It is byte-deterministic for a given
//! run, so trace equality doubles as run equality in tests.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{
    DecisionRecord, DeliveryChoice, FailureEntry, FailureSpec, MessageRecord, ProcessId, RunRecord,
    SystemParams,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceParams {
    pub protocol: String,
    pub n: u8,
    pub f: u8,
    pub context: crate::kernel::Context,
    pub horizon: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TraceFailure {
    Subset {
        process: u8,
        crash_round: u8,
        deliver: Vec<u8>,
    },
    Prefix {
        process: u8,
        crash_round: u8,
        prefix: u8,
        #[serde(default)]
        decide_before_crash: bool,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceDoc {
    pub params: TraceParams,
    pub initial_values: String,
    pub failures: Vec<TraceFailure>,
    pub messages: Vec<MessageRecord>,
    pub decisions: BTreeMap<String, DecisionRecord>,
    pub halts: BTreeMap<String, u8>,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed trace JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed trace: {0}")]
    Malformed(String),
}

pub fn to_trace(record: &RunRecord) -> TraceDoc {
    TraceDoc {
        params: TraceParams {
            protocol: record.protocol.clone(),
            n: record.params.n,
            f: record.params.f,
            context: record.params.context,
            horizon: record.params.horizon,
        },
        initial_values: record.values_string(),
        failures: record
            .failures
            .entries()
            .iter()
            .map(|e| match e.delivery {
                DeliveryChoice::Subset(ids) => TraceFailure::Subset {
                    process: e.process.0,
                    crash_round: e.crash_round,
                    deliver: ids.into(),
                },
                DeliveryChoice::Prefix {
                    len,
                    decide_before_crash,
                } => TraceFailure::Prefix {
                    process: e.process.0,
                    crash_round: e.crash_round,
                    prefix: len,
                    decide_before_crash,
                },
            })
            .collect(),
        messages: record.messages.clone(),
        decisions: record
            .decisions
            .iter()
            .map(|(p, d)| (p.to_string(), *d))
            .collect(),
        halts: record
            .halts
            .iter()
            .map(|(p, h)| (p.to_string(), *h))
            .collect(),
    }
}

pub fn from_trace(doc: &TraceDoc) -> Result<RunRecord, TraceError> {
    let params = SystemParams {
        n: doc.params.n,
        f: doc.params.f,
        context: doc.params.context,
        horizon: doc.params.horizon,
    };
    let initial_values: Vec<bool> = doc
        .initial_values
        .chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            other => Err(TraceError::Malformed(format!("bad value bit {other:?}"))),
        })
        .collect::<Result<_, _>>()?;
    if initial_values.len() != params.n as usize {
        return Err(TraceError::Malformed(format!(
            "{} value bits for n={}",
            initial_values.len(),
            params.n
        )));
    }
    let failures = FailureSpec::new(
        doc.failures
            .iter()
            .map(|f| match f {
                TraceFailure::Subset {
                    process,
                    crash_round,
                    deliver,
                } => {
                    let ids = deliver.clone().try_into().map_err(TraceError::Malformed)?;
                    Ok(FailureEntry {
                        process: ProcessId(*process),
                        crash_round: *crash_round,
                        delivery: DeliveryChoice::Subset(ids),
                    })
                }
                TraceFailure::Prefix {
                    process,
                    crash_round,
                    prefix,
                    decide_before_crash,
                } => Ok(FailureEntry {
                    process: ProcessId(*process),
                    crash_round: *crash_round,
                    delivery: DeliveryChoice::Prefix {
                        len: *prefix,
                        decide_before_crash: *decide_before_crash,
                    },
                }),
            })
            .collect::<Result<Vec<_>, TraceError>>()?,
    );
    let parse_key = |k: &str| -> Result<ProcessId, TraceError> {
        k.parse::<u8>()
            .map(ProcessId)
            .map_err(|_| TraceError::Malformed(format!("bad process key {k:?}")))
    };
    let mut decisions = BTreeMap::new();
    for (k, d) in &doc.decisions {
        decisions.insert(parse_key(k)?, *d);
    }
    let mut halts = BTreeMap::new();
    for (k, h) in &doc.halts {
        halts.insert(parse_key(k)?, *h);
    }
    let rounds_executed = doc
        .messages
        .iter()
        .map(|m| m.round)
        .chain(halts.values().copied())
        .chain(decisions.values().map(|d| d.time))
        .chain(failures.entries().iter().map(|e| e.crash_round))
        .max()
        .unwrap_or(0);
    Ok(RunRecord {
        protocol: doc.params.protocol.clone(),
        params,
        initial_values,
        failures,
        messages: doc.messages.clone(),
        decisions,
        halts,
        rounds_executed,
    })
}

/// The canonical JSON text of a run. Field order is fixed and maps are
/// sorted, so equal runs produce identical bytes.
pub fn canonical_json(record: &RunRecord) -> String {
    let mut s = serde_json::to_string_pretty(&to_trace(record)).expect("trace serializes");
    s.push('\n');
    s
}

pub fn write_trace(path: &Path, record: &RunRecord) -> Result<(), TraceError> {
    Ok(fs::write(path, canonical_json(record))?)
}

pub fn read_trace(path: &Path) -> Result<RunRecord, TraceError> {
    let doc: TraceDoc = serde_json::from_str(&fs::read_to_string(path)?)?;
    from_trace(&doc)
}

/// FNV-1a over the run key; stable across platforms and releases, used
/// to name spilled trace files.
pub fn stable_hash(key: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in key.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// File name for a spilled run: a stable hash of `(values, failures)`.
pub fn spill_file_name(record: &RunRecord) -> String {
    format!("{:016x}.json", stable_hash(&record.key_string()))
}
