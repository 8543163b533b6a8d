//! Per-protocol behavior pinned against hand-executed rounds, the
//! published nice-run costs, and the commitment conditions checked
//! exhaustively over small universes.

use std::ops::ControlFlow;

use silent_choir::analysis::{ac_verdict, check_ac_universe, metrics};
use silent_choir::enumerate::{EnumerateOptions, RunUniverse};
use silent_choir::kernel::{
    execute, DecisionAction, DeliveryChoice, FailureEntry, FailureSpec, IdSet, Payload, ProcessId,
    Run, SystemParams,
};
use silent_choir::protocols::{check_b1_properties, B1Consensus, Protocol, ProtocolKind};

fn params_for(protocol: &dyn Protocol, n: u8, f: u8) -> SystemParams {
    SystemParams {
        n,
        f,
        context: protocol.default_context(),
        horizon: protocol.default_horizon(f),
    }
}

fn values(bits: &str) -> Vec<bool> {
    bits.chars().map(|c| c == '1').collect()
}

fn run(kind: ProtocolKind, bits: &str, f: u8, spec: &FailureSpec) -> Run {
    let protocol = kind.build();
    let params = params_for(protocol.as_ref(), bits.len() as u8, f);
    execute(protocol.as_ref(), &values(bits), spec, &params).unwrap()
}

fn nice(kind: ProtocolKind, n: u8, f: u8) -> Run {
    run(kind, &"1".repeat(n as usize), f, &FailureSpec::NONE)
}

fn sends_of(run: &Run, p: u8, round: u8) -> Vec<(ProcessId, Payload)> {
    run.local_state(ProcessId(p), round)
        .unwrap()
        .active()
        .unwrap()
        .round(round)
        .unwrap()
        .sends
        .clone()
}

// ---- stealth ---------------------------------------------------------

#[test]
fn stealth_nice_run_message_pattern() {
    // Rounds 1-2 by hand: votes 1->0 and 2->0, then all1 0->1.
    let r = nice(ProtocolKind::Stealth, 3, 1);
    assert_eq!(sends_of(&r, 0, 1), vec![(ProcessId(0), Payload::One)]); // virtual
    assert_eq!(sends_of(&r, 2, 1), vec![(ProcessId(0), Payload::One)]);
    assert_eq!(
        sends_of(&r, 0, 2),
        vec![(ProcessId(0), Payload::All1), (ProcessId(1), Payload::All1)]
    );
    // Silent broadcast: no messages from round 3 on.
    assert!(r.record.messages.iter().all(|m| m.round <= 2));
}

#[test]
fn stealth_choir_member_missing_evidence_broadcasts_err() {
    // Process 0 crashes in round 2 delivering nothing: process 1 is in
    // the choir and lacks its all1, so it raises err to everyone.
    let spec = FailureSpec::new(vec![FailureEntry {
        process: ProcessId(0),
        crash_round: 2,
        delivery: DeliveryChoice::Subset(IdSet::EMPTY),
    }]);
    let r = run(ProtocolKind::Stealth, "111", 1, &spec);
    let errs: Vec<_> = r
        .record
        .messages
        .iter()
        .filter(|m| m.payload == Payload::Err)
        .collect();
    assert_eq!(errs.len(), 2, "err to both other processes");
    assert!(errs
        .iter()
        .all(|m| m.sender == ProcessId(1) && m.round == 3));
    // Nobody commits at 3; the consensus tail decides at f+4 = 5.
    for d in r.record.decisions.values() {
        assert_eq!(d.time, 5);
    }
}

#[test]
fn stealth_slow_path_still_commits_when_all_ones() {
    // All values are 1 but the relay crashed mid-round-2; the survivor
    // of the choir holds all1 and seeds the consensus with 1.
    let spec = FailureSpec::new(vec![FailureEntry {
        process: ProcessId(0),
        crash_round: 2,
        delivery: DeliveryChoice::Subset([ProcessId(1)].into_iter().collect()),
    }]);
    let r = run(ProtocolKind::Stealth, "111", 1, &spec);
    assert!(r
        .record
        .decisions
        .values()
        .all(|d| d.action == DecisionAction::Commit));
    assert!(ac_verdict(&r.record).all_pass());
}

// ---- d2 --------------------------------------------------------------

#[test]
fn d2_round_one_targets_wrap_modulo_n() {
    let r = nice(ProtocolKind::D2, 4, 2);
    // Hand-evaluated window {3, 0, 1} for process 3: network sends go
    // to 0 and 1, the self copy is virtual.
    let sends = sends_of(&r, 3, 1);
    let targets: Vec<u8> = sends.iter().map(|(p, _)| p.0).collect();
    assert_eq!(targets, vec![3, 0, 1]);
    let network: Vec<_> = r
        .record
        .messages
        .iter()
        .filter(|m| m.sender == ProcessId(3))
        .map(|m| m.receiver.0)
        .collect();
    assert_eq!(network, vec![0, 1]);
}

#[test]
fn d2_zero_vote_triggers_err_broadcast() {
    let r = run(ProtocolKind::D2, "0111", 2, &FailureSpec::NONE);
    // v_0 = 0: the window {0,1,2} misses its vote, and 0 itself holds
    // too few; all of them broadcast err in round 2.
    let err_senders: IdSet = r
        .record
        .messages
        .iter()
        .filter(|m| m.payload == Payload::Err && m.round == 2)
        .map(|m| m.sender)
        .collect();
    assert_eq!(Vec::from(err_senders), vec![0, 1, 2]);
    assert!(r
        .record
        .decisions
        .values()
        .all(|d| d.action == DecisionAction::Abort));
}

#[test]
fn d2_nice_runs_are_silent_after_round_one() {
    for (n, f) in [(4, 2), (5, 2), (6, 3)] {
        let r = nice(ProtocolKind::D2, n, f);
        assert!(r.record.messages.iter().all(|m| m.round == 1));
        assert_eq!(r.record.messages.len(), (n as usize) * (f as usize));
    }
}

// ---- d1f1 ------------------------------------------------------------

#[test]
fn d1f1_nice_run_commits_at_time_1() {
    for n in [3u8, 4, 5] {
        let r = nice(ProtocolKind::D1f1, n, 1);
        assert_eq!(r.record.messages.len(), (n as usize) * (n as usize - 1));
        for p in 0..n {
            let d = r.record.decisions[&ProcessId(p)];
            assert_eq!((d.action, d.time), (DecisionAction::Commit, 1));
            assert_eq!(r.record.halts[&ProcessId(p)], 2);
        }
    }
}

#[test]
fn d1f1_zero_vote_aborts_at_time_3() {
    let r = run(ProtocolKind::D1f1, "101", 1, &FailureSpec::NONE);
    let d = r.record.decisions[&ProcessId(2)];
    assert_eq!((d.action, d.time), (DecisionAction::Abort, 3));
    assert_eq!(r.record.halts[&ProcessId(2)], 3);
    assert!(r
        .record
        .decisions
        .values()
        .all(|d| d.action == DecisionAction::Abort));
}

#[test]
fn d1f1_committed_process_answers_askers() {
    // Process 1 crashes in round 1 reaching only process 0: process 0
    // commits at 1, process 2 asks, process 0 answers with all1.
    let spec = FailureSpec::new(vec![FailureEntry {
        process: ProcessId(1),
        crash_round: 1,
        delivery: DeliveryChoice::Subset([ProcessId(0)].into_iter().collect()),
    }]);
    let r = run(ProtocolKind::D1f1, "111", 1, &spec);
    let d0 = r.record.decisions[&ProcessId(0)];
    assert_eq!((d0.action, d0.time), (DecisionAction::Commit, 1));
    assert_eq!(sends_of(&r, 0, 3), vec![(ProcessId(2), Payload::All1)]);
    let d2 = r.record.decisions[&ProcessId(2)];
    assert_eq!((d2.action, d2.time), (DecisionAction::Commit, 3));
    assert!(ac_verdict(&r.record).all_pass());
}

// ---- d15 -------------------------------------------------------------

#[test]
fn d15_nice_run_commits_mid_round_two() {
    let r = nice(ProtocolKind::D15, 3, 2);
    assert_eq!(r.record.messages.len(), 12); // n^2 + nf - n
    for p in 0..3 {
        let d = r.record.decisions[&ProcessId(p)];
        assert_eq!(
            (d.action, d.time, d.mid_round),
            (DecisionAction::Commit, 1, true)
        );
        assert_eq!(r.record.halts[&ProcessId(p)], 2);
    }
}

#[test]
fn d15_round_two_targets_are_cyclic_successors() {
    let r = nice(ProtocolKind::D15, 3, 2);
    // Process 1 relays all1 to {2, 0}, ordered by ascending id.
    assert_eq!(
        sends_of(&r, 1, 2),
        vec![(ProcessId(0), Payload::All1), (ProcessId(2), Payload::All1)]
    );
}

#[test]
fn d15_zero_vote_sends_huh_and_never_commits() {
    let r = run(ProtocolKind::D15, "011", 2, &FailureSpec::NONE);
    assert!(r
        .record
        .messages
        .iter()
        .filter(|m| m.round == 2)
        .all(|m| m.payload == Payload::Huh));
    assert!(r
        .record
        .decisions
        .values()
        .all(|d| d.action == DecisionAction::Abort));
}

#[test]
fn d15_crash_mid_prefix_keeps_completed_sends() {
    // Process 0 commits mid-round-2 after both relays complete, then
    // crashes: the decision and both all1 messages survive.
    let spec = FailureSpec::new(vec![FailureEntry {
        process: ProcessId(0),
        crash_round: 2,
        delivery: DeliveryChoice::Prefix {
            len: 2,
            decide_before_crash: true,
        },
    }]);
    let r = run(ProtocolKind::D15, "111", 2, &spec);
    let d = r.record.decisions[&ProcessId(0)];
    assert_eq!(
        (d.action, d.time, d.mid_round),
        (DecisionAction::Commit, 1, true)
    );
    assert_eq!(
        r.record
            .messages
            .iter()
            .filter(|m| m.sender == ProcessId(0) && m.round == 2)
            .count(),
        2
    );
    assert!(ac_verdict(&r.record).all_pass());

    // Same crash point without the decision flag: sends out, no commit.
    let spec = FailureSpec::new(vec![FailureEntry {
        process: ProcessId(0),
        crash_round: 2,
        delivery: DeliveryChoice::Prefix {
            len: 2,
            decide_before_crash: false,
        },
    }]);
    let r = run(ProtocolKind::D15, "111", 2, &spec);
    assert!(!r.record.decisions.contains_key(&ProcessId(0)));
}

// ---- consensus subroutine --------------------------------------------

#[test]
fn b1_all_zero_proposals_decide_zero() {
    let protocol = B1Consensus { tolerance: 1 };
    let params = SystemParams::new(3, 1, silent_choir::kernel::Context::GammaF, 2).unwrap();
    let r = execute(&protocol, &values("000"), &FailureSpec::NONE, &params).unwrap();
    assert!(r
        .record
        .decisions
        .values()
        .all(|d| d.action == DecisionAction::Abort));
    assert!(r.record.messages.is_empty());
}

#[test]
fn b1_single_correct_one_floods_to_all() {
    let protocol = B1Consensus { tolerance: 1 };
    let params = SystemParams::new(3, 1, silent_choir::kernel::Context::GammaF, 2).unwrap();
    let r = execute(&protocol, &values("100"), &FailureSpec::NONE, &params).unwrap();
    assert!(r
        .record
        .decisions
        .values()
        .all(|d| d.action == DecisionAction::Commit));
}

#[test]
fn b1_crashed_proposer_reaching_one_process_still_agrees() {
    // Brute force over every delivery subset of the crashing proposer;
    // for the singleton deliveries everyone left decides 1.
    let protocol = B1Consensus { tolerance: 1 };
    let params = SystemParams::new(3, 1, silent_choir::kernel::Context::GammaF, 2).unwrap();
    for subset in [IdSet::EMPTY, IdSet(0b010), IdSet(0b100), IdSet(0b110)] {
        let spec = FailureSpec::new(vec![FailureEntry {
            process: ProcessId(0),
            crash_round: 1,
            delivery: DeliveryChoice::Subset(subset),
        }]);
        let r = execute(&protocol, &values("100"), &spec, &params).unwrap();
        let mut kinds: Vec<DecisionAction> =
            r.record.decisions.values().map(|d| d.action).collect();
        kinds.dedup();
        assert_eq!(kinds.len(), 1, "split decision under delivery {subset}");
        if subset.len() == 1 {
            assert_eq!(kinds[0], DecisionAction::Commit);
        }
    }
}

#[test]
fn b1_contract_holds_exhaustively_at_desk_scale() {
    for n in [3u8, 4] {
        for tolerance in [0u8, 1] {
            let report = check_b1_properties(n, tolerance, 1_000_000).unwrap();
            assert!(report.clean(), "violations: {report:?}");
            assert!(report.runs_checked > 0);
        }
    }
}

// ---- commitment conditions over whole universes -----------------------

#[test]
fn ac_conditions_hold_over_small_universes() {
    for (kind, n, f) in [
        (ProtocolKind::Stealth, 3, 1),
        (ProtocolKind::D2, 4, 2),
        (ProtocolKind::D1f1, 3, 1),
        (ProtocolKind::D15, 3, 2),
    ] {
        let protocol = kind.build();
        let params = params_for(protocol.as_ref(), n, f);
        let universe =
            RunUniverse::new(protocol.as_ref(), params, EnumerateOptions::default()).unwrap();
        let report = check_ac_universe(&universe).unwrap();
        assert!(report.clean(), "{}: {report:?}", kind.name());
    }
}

#[test]
fn nice_run_metrics_match_published_costs() {
    let m = metrics(&nice(ProtocolKind::Stealth, 5, 2).record);
    assert_eq!(m.messages, 6);
    assert!(m.decision_times.iter().all(|d| d.unwrap().time == 3));

    let m = metrics(&nice(ProtocolKind::D1f1, 4, 1).record);
    assert_eq!(m.messages, 12);
    assert!(m.decision_times.iter().all(|d| d.unwrap().time == 1));

    let m = metrics(&nice(ProtocolKind::D15, 3, 2).record);
    assert_eq!(m.messages, 12);
    assert!(m
        .decision_times
        .iter()
        .all(|d| { d.unwrap().time == 1 && d.unwrap().mid_round }));
}

#[test]
fn every_process_eventually_halts_within_the_horizon() {
    for (kind, n, f) in [
        (ProtocolKind::Stealth, 3, 1),
        (ProtocolKind::D2, 4, 2),
        (ProtocolKind::D1f1, 3, 1),
        (ProtocolKind::D15, 3, 2),
    ] {
        let protocol = kind.build();
        let params = params_for(protocol.as_ref(), n, f);
        let universe =
            RunUniverse::new(protocol.as_ref(), params, EnumerateOptions::default()).unwrap();
        universe
            .for_each(&mut |run| {
                for p in params.process_ids() {
                    if run.record.is_correct(p) {
                        assert!(
                            run.record.halts.contains_key(&p),
                            "{}: correct {p} never halts in {}",
                            kind.name(),
                            run.record.key_string()
                        );
                    }
                }
                ControlFlow::Continue(())
            })
            .unwrap();
    }
}
