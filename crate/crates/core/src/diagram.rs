//! ASCII round/message diagrams: one lane per process, one column per
//! round, arrows for messages, ⊥ at a crash and decision/halt markers
//! in a trailing outcome column.

use crate::kernel::{DecisionAction, Payload, ProcessId, RunRecord};

pub fn render(record: &RunRecord) -> String {
    let n = record.params.n;
    let rounds = record.rounds_executed;

    let mut cells: Vec<Vec<String>> = (0..n)
        .map(|p| {
            (1..=rounds)
                .map(|m| cell(record, ProcessId(p), m))
                .collect()
        })
        .collect();
    let outcomes: Vec<String> = (0..n).map(|p| outcome(record, ProcessId(p))).collect();

    let width_of = |s: &str| s.chars().count();
    let mut widths: Vec<usize> = (0..rounds as usize)
        .map(|k| {
            cells
                .iter()
                .map(|row| width_of(&row[k]))
                .max()
                .unwrap_or(1)
                .max(2)
        })
        .collect();
    for (k, w) in widths.iter_mut().enumerate() {
        *w = (*w).max(format!("r{}", k + 1).len());
    }

    let mut out = format!(
        "{} n={} f={} {} values={} failures={}\n\n",
        record.protocol,
        record.params.n,
        record.params.f,
        record.params.context,
        record.values_string(),
        record.failures
    );
    let pad = |s: &str, w: usize| {
        let fill = w.saturating_sub(s.chars().count());
        format!("{s}{}", " ".repeat(fill))
    };
    out.push_str("    ");
    for (k, w) in widths.iter().enumerate() {
        out.push_str(&format!("| {} ", pad(&format!("r{}", k + 1), *w)));
    }
    out.push_str("| outcome\n");
    for p in 0..n as usize {
        out.push_str(&format!("p{p:<3}"));
        for (k, w) in widths.iter().enumerate() {
            out.push_str(&format!("| {} ", pad(&cells[p][k], *w)));
        }
        out.push_str(&format!("| {}\n", outcomes[p]));
        cells[p].clear();
    }
    out
}

/// What process `p` did in round `m`: its delivered sends grouped by
/// payload, a ⊥ in its crash round, × afterwards, · when silent.
fn cell(record: &RunRecord, p: ProcessId, m: u8) -> String {
    let crash = record.failures.crash_round_of(p);
    if crash.is_some_and(|c| c < m) {
        return "×".into();
    }
    let halted = record.halts.get(&p).is_some_and(|&h| h < m);
    if halted {
        return " ".into();
    }
    let mut parts: Vec<String> = Vec::new();
    let mut sends: Vec<(Payload, ProcessId)> = record
        .messages
        .iter()
        .filter(|msg| msg.round == m && msg.sender == p)
        .map(|msg| (msg.payload, msg.receiver))
        .collect();
    sends.sort();
    let mut k = 0;
    while k < sends.len() {
        let payload = sends[k].0;
        let receivers: Vec<String> = sends[k..]
            .iter()
            .take_while(|(pl, _)| *pl == payload)
            .map(|(_, r)| r.to_string())
            .collect();
        k += receivers.len();
        parts.push(format!("→{} {payload}", receivers.join(",")));
    }
    if crash == Some(m) {
        parts.push("⊥".into());
    }
    if parts.is_empty() {
        "·".into()
    } else {
        parts.join(" ")
    }
}

fn outcome(record: &RunRecord, p: ProcessId) -> String {
    let mut parts = Vec::new();
    if let Some(d) = record.decisions.get(&p) {
        let tag = match d.action {
            DecisionAction::Commit => "commit",
            DecisionAction::Abort => "abort",
        };
        parts.push(format!(
            "{tag}@{}{}",
            d.time,
            if d.mid_round { " (mid)" } else { "" }
        ));
    }
    if let Some(h) = record.halts.get(&p) {
        parts.push(format!("halt@{h}"));
    }
    if let Some(c) = record.failures.crash_round_of(p) {
        parts.push(format!("⊥r{c}"));
    }
    if parts.is_empty() {
        "—".into()
    } else {
        parts.join(" ")
    }
}
