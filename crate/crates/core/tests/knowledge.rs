//! Knowledge-operator checks: fact evaluation, indistinguishability,
//! `K_i` by exhaustive scan, the suites built on bucketed indexes, and
//! the structural properties (knowledge, perfect recall, monotone
//! shrinkage) over small universes.

use std::ops::ControlFlow;

use silent_choir::enumerate::{EnumerateOptions, RunUniverse};
use silent_choir::kernel::{
    execute, DeliveryChoice, FailureEntry, FailureSpec, IdSet, ProcessId, Run, SystemParams,
};
use silent_choir::knowledge::{
    check_commit_knowledge, check_lemma_suite, check_silent_choir, fact_eval, indistinguishable,
    knows, lemma_instance_for, silence_witness, Fact, KnowledgeError, KnowledgeIndex,
    LemmaInstance,
};
use silent_choir::protocols::{protocol_by_name, Protocol, ProtocolKind};

fn params_for(protocol: &dyn Protocol, n: u8, f: u8) -> SystemParams {
    SystemParams {
        n,
        f,
        context: protocol.default_context(),
        horizon: protocol.default_horizon(f),
    }
}

fn stealth_universe(protocol: &dyn Protocol) -> RunUniverse<'_> {
    let params = params_for(protocol, 3, 1);
    RunUniverse::new(protocol, params, EnumerateOptions::default()).unwrap()
}

fn values(bits: &str) -> Vec<bool> {
    bits.chars().map(|c| c == '1').collect()
}

fn run_of(universe: &RunUniverse, bits: &str, spec: &FailureSpec) -> Run {
    universe
        .find(&values(bits), spec)
        .unwrap()
        .expect("run in universe")
}

// ---- facts -------------------------------------------------------------

#[test]
fn fact_grammar_round_trips() {
    for text in [
        "all1",
        "val 2 1",
        "val 0 0",
        "faulty 1",
        "chaincorrect 2",
        "not(all1)",
        "and(val 1 1,faulty 0)",
        "or(val 1 1,or(faulty 1,not(all1)))",
    ] {
        let fact = Fact::parse(text).unwrap();
        assert_eq!(fact.to_string(), text);
        assert_eq!(Fact::parse(&fact.to_string()).unwrap(), fact);
    }
    assert!(Fact::parse("know 1").is_err());
    assert!(Fact::parse("val 1 2").is_err());
    assert!(Fact::parse("and(all1)").is_err());
    assert!(Fact::parse("all1 junk").is_err());
}

#[test]
fn fact_evaluation_on_concrete_runs() {
    let protocol = protocol_by_name("stealth").unwrap();
    let universe = stealth_universe(protocol.as_ref());

    let nice = run_of(&universe, "111", &FailureSpec::NONE);
    assert!(fact_eval(&nice.record, &Fact::All1));
    assert!(fact_eval(&nice.record, &Fact::ValueIs(ProcessId(2), true)));
    assert!(!fact_eval(&nice.record, &Fact::IsFaulty(ProcessId(0))));
    assert!(fact_eval(&nice.record, &Fact::ChainToCorrect(ProcessId(2))));

    let dark = run_of(&universe, "110", &FailureSpec::NONE);
    assert!(!fact_eval(&dark.record, &Fact::All1));
    assert!(!fact_eval(&dark.record, &Fact::ValueIs(ProcessId(2), true)));
    assert!(fact_eval(&dark.record, &Fact::ValueIs(ProcessId(2), false)));

    // Process 2 crashes before sending anything: its chain stops at a
    // faulty process.
    let silent = FailureSpec::new(vec![FailureEntry {
        process: ProcessId(2),
        crash_round: 1,
        delivery: DeliveryChoice::Subset(IdSet::EMPTY),
    }]);
    let isolated = run_of(&universe, "111", &silent);
    assert!(!fact_eval(
        &isolated.record,
        &Fact::ChainToCorrect(ProcessId(2))
    ));
    assert!(fact_eval(&isolated.record, &Fact::IsFaulty(ProcessId(2))));
    assert!(fact_eval(
        &isolated.record,
        &Fact::Or(
            Box::new(Fact::ChainToCorrect(ProcessId(2))),
            Box::new(Fact::IsFaulty(ProcessId(2)))
        )
    ));
}

// ---- indistinguishability ----------------------------------------------

#[test]
fn indistinguishability_examples() {
    let protocol = protocol_by_name("stealth").unwrap();
    let universe = stealth_universe(protocol.as_ref());
    let nice = run_of(&universe, "111", &FailureSpec::NONE);
    let twin = run_of(&universe, "110", &FailureSpec::NONE);

    assert!(indistinguishable(&nice, &nice, ProcessId(1), 4).unwrap());
    // At time 0 only your own value is visible.
    assert!(indistinguishable(&nice, &twin, ProcessId(0), 0).unwrap());
    assert!(!indistinguishable(&nice, &twin, ProcessId(2), 0).unwrap());
    // By time 3 the silent round has separated the worlds for everyone.
    assert!(!indistinguishable(&nice, &twin, ProcessId(2), 3).unwrap());
}

// ---- knows -------------------------------------------------------------

#[test]
fn committed_process_knows_all_values_are_one() {
    let protocol = protocol_by_name("stealth").unwrap();
    let universe = stealth_universe(protocol.as_ref());
    let nice = run_of(&universe, "111", &FailureSpec::NONE);

    let at_commit = knows(&universe, &nice, ProcessId(2), 3, &Fact::All1).unwrap();
    assert!(at_commit.holds);
    assert!(at_commit.scanned >= 1);

    // At time 0 the twin with v_1 = 0 is indistinguishable.
    let at_start = knows(
        &universe,
        &nice,
        ProcessId(2),
        0,
        &Fact::ValueIs(ProcessId(1), true),
    )
    .unwrap();
    assert!(!at_start.holds);
    assert!(at_start.scanned > 1);

    // The relay already knows at time 1, holding every vote.
    assert!(
        knows(&universe, &nice, ProcessId(0), 1, &Fact::All1)
            .unwrap()
            .holds
    );
}

#[test]
fn knowledge_at_a_crashed_state_is_rejected() {
    let protocol = protocol_by_name("stealth").unwrap();
    let universe = stealth_universe(protocol.as_ref());
    let spec = FailureSpec::new(vec![FailureEntry {
        process: ProcessId(0),
        crash_round: 1,
        delivery: DeliveryChoice::Subset(IdSet::EMPTY),
    }]);
    let run = run_of(&universe, "111", &spec);
    assert!(matches!(
        knows(&universe, &run, ProcessId(0), 2, &Fact::All1),
        Err(KnowledgeError::CrashedState { .. })
    ));
}

#[test]
fn knowledge_property_holds_across_a_universe() {
    // Whatever is known is true of the run itself.
    let protocol = protocol_by_name("stealth").unwrap();
    let universe = stealth_universe(protocol.as_ref());
    let tracked = vec![
        Fact::All1,
        Fact::ValueIs(ProcessId(0), true),
        Fact::ValueIs(ProcessId(1), true),
        Fact::ValueIs(ProcessId(2), true),
        Fact::IsFaulty(ProcessId(1)),
        Fact::ChainToCorrect(ProcessId(2)),
    ];
    let index = KnowledgeIndex::build(&universe, tracked.clone()).unwrap();
    universe
        .for_each(&mut |run| {
            for i in (0..3).map(ProcessId) {
                for mask in index.masks_for(run, i) {
                    for (k, fact) in tracked.iter().enumerate() {
                        if mask & (1 << k) != 0 {
                            assert!(
                                fact_eval(&run.record, fact),
                                "K({fact}) held in {} where the fact is false",
                                run.record.key_string()
                            );
                        }
                    }
                }
            }
            ControlFlow::Continue(())
        })
        .unwrap();
}

#[test]
fn perfect_recall_at_desk_scale() {
    // Knowledge of run-level facts never evaporates while a process
    // stays up.
    for name in ["stealth", "d1f1"] {
        let protocol = protocol_by_name(name).unwrap();
        let universe = stealth_universe(protocol.as_ref());
        let tracked = vec![Fact::All1, Fact::ValueIs(ProcessId(1), true)];
        let index = KnowledgeIndex::build(&universe, tracked).unwrap();
        universe
            .for_each(&mut |run| {
                for i in (0..3).map(ProcessId) {
                    let masks = index.masks_for(run, i);
                    for pair in masks.windows(2) {
                        assert_eq!(
                            pair[0] & pair[1],
                            pair[0],
                            "{name}: knowledge lost between steps in {}",
                            run.record.key_string()
                        );
                    }
                }
                ControlFlow::Continue(())
            })
            .unwrap();
    }
}

#[test]
fn knowledge_survives_universe_shrinkage() {
    let protocol = protocol_by_name("stealth").unwrap();
    let full = stealth_universe(protocol.as_ref());
    let restricted = RunUniverse::new(
        protocol.as_ref(),
        *full.params(),
        EnumerateOptions {
            value_filter: Some(Box::new(|v: &[bool]| v[0])),
            ..Default::default()
        },
    )
    .unwrap();
    let nice = run_of(&full, "111", &FailureSpec::NONE);
    for m in 0..=4u8 {
        for i in (0..3).map(ProcessId) {
            for fact in [Fact::All1, Fact::ValueIs(ProcessId(0), true)] {
                let wide = knows(&full, &nice, i, m, &fact).unwrap();
                let narrow = knows(&restricted, &nice, i, m, &fact).unwrap();
                assert!(
                    !wide.holds || narrow.holds,
                    "K({fact}) at (p{i},{m}) held in the full universe but not the subset"
                );
            }
        }
    }
}

// ---- suites --------------------------------------------------------------

#[test]
fn commit_knowledge_is_clean_for_real_protocols() {
    for (name, n, f) in [("stealth", 3u8, 1u8), ("d1f1", 3, 1), ("d15", 3, 2)] {
        let protocol = protocol_by_name(name).unwrap();
        let params = params_for(protocol.as_ref(), n, f);
        let universe =
            RunUniverse::new(protocol.as_ref(), params, EnumerateOptions::default()).unwrap();
        let report = check_commit_knowledge(&universe).unwrap();
        assert!(report.clean(), "{name}: {report:?}");
        assert!(report.runs_checked > 0);
    }
}

#[test]
fn commit_at_time_zero_is_caught_with_a_witness() {
    let protocol = protocol_by_name("mutant-commit0").unwrap();
    let universe = stealth_universe(protocol.as_ref());
    let report = check_commit_knowledge(&universe).unwrap();
    assert!(!report.clean());
    let witness = report.classes[0].first_witness.clone().unwrap();
    assert!(witness.contains("committed at 0"), "{witness}");
    assert!(witness.contains("indistinguishable from"), "{witness}");
}

#[test]
fn silent_choir_condition_is_clean_on_the_small_universe() {
    let protocol = protocol_by_name("stealth").unwrap();
    let universe = stealth_universe(protocol.as_ref());
    let report = check_silent_choir(&universe).unwrap();
    assert!(report.clean(), "{report:?}");
    assert!(report.suite.contains("knowledge points"));
}

#[test]
fn silent_broadcast_instances_are_clean_and_show_the_singleton_gap() {
    for (name, n, f) in [("stealth", 3u8, 1u8), ("d1f1", 3, 1), ("d15", 3, 2)] {
        let protocol = protocol_by_name(name).unwrap();
        let params = params_for(protocol.as_ref(), n, f);
        let universe =
            RunUniverse::new(protocol.as_ref(), params, EnumerateOptions::default()).unwrap();
        let instance = lemma_instance_for(name, f, n).unwrap();
        let report = check_lemma_suite(&universe, &instance).unwrap();
        assert!(report.report.clean(), "{name}: {:?}", report.report);
        assert!(
            report.singleton_knowledge_gap.is_some(),
            "{name}: a single silent sender should not grant plain knowledge"
        );
    }
}

#[test]
fn d2_broadcast_instance_needs_the_whole_process_set() {
    // Round-2 err silence in d2 informs a process only if *nobody*
    // raised an err it can hear. The full process set is a sound sender
    // set; a window of f predecessors is not, because f crashes can
    // silence the window while a live third party still holds a 0.
    let protocol = protocol_by_name("d2").unwrap();
    let params = params_for(protocol.as_ref(), 4, 2);
    let universe =
        RunUniverse::new(protocol.as_ref(), params, EnumerateOptions::default()).unwrap();

    let sound = lemma_instance_for("d2", 2, 4).unwrap();
    assert_eq!(sound.senders, IdSet::full(4));
    let report = check_lemma_suite(&universe, &sound).unwrap();
    assert!(report.report.clean(), "{:?}", report.report);

    let window = LemmaInstance {
        phi: Fact::All1,
        senders: [ProcessId(2), ProcessId(3)].into_iter().collect(),
        round: 2,
        singletons: Vec::new(),
    };
    let narrow = check_lemma_suite(&universe, &window).unwrap();
    assert!(
        narrow.report.classes[0].violations > 0,
        "a sender window of size f must be unsound"
    );
}

#[test]
fn undersized_sender_set_is_flagged() {
    // With the sender set cut to a single member (size f, not f+1), the
    // set rule is unsound and the suite must find violations.
    let protocol = protocol_by_name("stealth").unwrap();
    let universe = stealth_universe(protocol.as_ref());
    let instance = LemmaInstance {
        phi: Fact::All1,
        senders: [ProcessId(0)].into_iter().collect(),
        round: 3,
        singletons: vec![(ProcessId(0), Fact::All1)],
    };
    let report = check_lemma_suite(&universe, &instance).unwrap();
    let set_class = &report.report.classes[0];
    assert_eq!(set_class.name, "silent-broadcast-set");
    assert!(set_class.violations > 0);
}

#[test]
fn silence_carries_a_value_in_the_nice_stealth_run() {
    let protocol = protocol_by_name("stealth").unwrap();
    let universe = stealth_universe(protocol.as_ref());
    let nice = run_of(&universe, "111", &FailureSpec::NONE);
    let witness = silence_witness(&universe, &nice)
        .unwrap()
        .expect("witness exists");
    assert_eq!(witness.messages, 3);
    assert_eq!(witness.no_silence_bound, 4);
    assert!(witness.messages < witness.no_silence_bound);
    // Process 2 hears nothing at all in the nice run, so it is the
    // committer that learned a value purely from silence.
    assert_eq!(witness.i, ProcessId(2));
    assert!(witness.j == ProcessId(0) || witness.j == ProcessId(1));
    assert_eq!(witness.time, 3);
}

#[test]
fn mismatched_run_and_universe_is_an_error() {
    let stealth = protocol_by_name("stealth").unwrap();
    let universe = stealth_universe(stealth.as_ref());
    let d1f1 = protocol_by_name("d1f1").unwrap();
    let params = params_for(d1f1.as_ref(), 3, 1);
    let foreign = execute(d1f1.as_ref(), &values("111"), &FailureSpec::NONE, &params).unwrap();
    assert!(matches!(
        knows(&universe, &foreign, ProcessId(0), 1, &Fact::All1),
        Err(KnowledgeError::RunMismatch(_))
    ));
}

#[test]
fn commit_knowledge_holds_for_kind_list() {
    // Spot-check the registry covers exactly the protocols plus mutants.
    for kind in ProtocolKind::ALL {
        assert!(protocol_by_name(kind.name()).is_some());
    }
    assert!(protocol_by_name("gw").is_none());
}
