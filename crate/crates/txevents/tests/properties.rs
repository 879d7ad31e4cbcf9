use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use txevents::harness::gen::{random_config, GenCont, GenEvent};
use txevents::harness::{
    explore_outcomes, outcome_equiv, run_scenario, standard_contexts, Chans, RunReport, Scenario, SimConfig,
    TaskOutcome,
};
use txevents::patterns::{increment_server, k_receive_event};
use txevents::{
    always_evt, choose_evt, guarded_recv_evt, never_evt, new_channel, recv_evt, send_evt, sleep, spawn_named, sync,
    then_evt, timeout_evt, EngineConfig, Runtime, TraceKind,
};

fn leaf() -> impl Strategy<Value = GenEvent> {
    prop_oneof![
        (0i64..4).prop_map(GenEvent::Always),
        Just(GenEvent::Never),
        (0usize..2, 0i64..4).prop_map(|(c, v)| GenEvent::Send(c, v)),
        (0usize..2).prop_map(GenEvent::Recv),
    ]
}

fn cont() -> impl Strategy<Value = GenCont> {
    prop_oneof![
        (1i64..3).prop_map(GenCont::Add),
        (0i64..4).prop_map(GenCont::AtLeast),
        (0usize..2).prop_map(GenCont::Forward),
        (0usize..2).prop_map(GenCont::RecvAdd),
    ]
}

/// Small events over two channels, at most three communication sites.
fn small_event() -> impl Strategy<Value = GenEvent> {
    leaf()
        .prop_recursive(2, 6, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(l, r)| GenEvent::Choose(Box::new(l), Box::new(r))),
                (inner, cont()).prop_map(|(e, k)| GenEvent::Then(Box::new(e), k)),
            ]
        })
        .prop_filter("too many communications", |e| e.comm_sites() <= 3)
}

fn check_trace(r: &RunReport) -> Result<(), TestCaseError> {
    prop_assert!(r.trace.windows(2).all(|w| w[0].seq < w[1].seq));
    let by_txn: BTreeMap<u64, _> = r.commits.iter().map(|c| (c.txn, c)).collect();
    for (i, rec) in r.trace.iter().enumerate() {
        if rec.kind != TraceKind::Commit {
            continue;
        }
        let txn = rec.txn.expect("commit records carry a transaction");
        let summary = by_txn.get(&txn).expect("every commit record has a summary");
        let n = summary.pairs.len();
        prop_assert!(i >= n);
        let mut matched: Vec<(u64, String)> = r.trace[i - n..i]
            .iter()
            .map(|t| {
                assert_eq!((t.kind, t.txn), (TraceKind::TentativeMatch, Some(txn)));
                (t.channel.unwrap().0, t.value.clone().unwrap())
            })
            .collect();
        let mut pairs: Vec<(u64, String)> = summary.pairs.iter().map(|(c, v)| (c.0, v.clone())).collect();
        matched.sort();
        pairs.sort();
        prop_assert_eq!(matched, pairs);
    }
    let mut seen = BTreeSet::new();
    for c in &r.commits {
        for p in &c.participants {
            prop_assert!(seen.insert(*p), "sync {:?} resolved twice", p);
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn same_seed_same_run(cfg_seed in any::<u64>(), seed in any::<u64>()) {
        let s = random_config(&mut ChaCha8Rng::seed_from_u64(cfg_seed)).scenario();
        let a = run_scenario(&s, &SimConfig::with_seed(seed)).unwrap();
        let b = run_scenario(&s, &SimConfig::with_seed(seed)).unwrap();
        prop_assert_eq!(&a.trace, &b.trace);
        prop_assert_eq!(&a.outcome, &b.outcome);
    }

    #[test]
    fn traces_are_well_formed_and_syncs_resolve_once(cfg_seed in any::<u64>(), seed in any::<u64>()) {
        let s = random_config(&mut ChaCha8Rng::seed_from_u64(cfg_seed)).scenario();
        check_trace(&run_scenario(&s, &SimConfig::with_seed(seed)).unwrap())?;
    }

    #[test]
    fn engine_outcome_is_an_oracle_outcome(cfg_seed in any::<u64>(), seeds in prop::collection::vec(any::<u64>(), 4)) {
        let g = random_config(&mut ChaCha8Rng::seed_from_u64(cfg_seed));
        let s = g.scenario();
        let oracle = explore_outcomes(&s, &SimConfig::default()).unwrap();
        for seed in seeds {
            let got = run_scenario(&s, &SimConfig::with_seed(seed)).unwrap().outcome;
            prop_assert!(oracle.contains(&got), "{:?}\nengine {}", g, got);
        }
    }

    #[test]
    fn building_events_leaves_no_trace(evs in prop::collection::vec(small_event(), 1..6)) {
        let rt = Runtime::with_trace(EngineConfig::default());
        rt.enter(|| {
            let chans = [new_channel::<i64>(), new_channel()];
            for e in &evs {
                drop(e.build(&chans));
            }
        });
        prop_assert!(rt.trace().is_empty());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn choose_with_never_and_right_unit(ev in small_event()) {
        let ctx = standard_contexts();
        let cfg = SimConfig::default();
        let (a, b, c) = (ev.clone(), ev.clone(), ev.clone());
        let plain = move |ch: &Chans| a.build(ch);
        prop_assert!(outcome_equiv(move |ch| choose_evt(b.build(ch), never_evt()), plain.clone(), &ctx, &cfg).unwrap());
        prop_assert!(outcome_equiv(move |ch| then_evt(c.build(ch), always_evt), plain, &ctx, &cfg).unwrap());
    }

    #[test]
    fn choose_commutes(l in small_event(), r in small_event()) {
        prop_assume!(l.comm_sites() + r.comm_sites() <= 3);
        let ctx = standard_contexts();
        let (l2, r2) = (l.clone(), r.clone());
        prop_assert!(outcome_equiv(
            move |ch| choose_evt(l.build(ch), r.build(ch)),
            move |ch| choose_evt(r2.build(ch), l2.build(ch)),
            &ctx,
            &SimConfig::default(),
        ).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn increment_server_hands_out_consecutive_values(
        clients in prop::collection::vec(prop::collection::vec(1usize..=2, 1..3), 1..4),
        seed in any::<u64>(),
    ) {
        let want: usize = clients.iter().flatten().sum();
        let s = Scenario::new("increments", move || {
            let c = increment_server();
            for (i, ks) in clients.clone().into_iter().enumerate() {
                spawn_named(format!("client-{i}"), move || {
                    for k in ks {
                        sync(k_receive_event(c, k))?;
                    }
                    Ok::<_, txevents::SyncError>(())
                });
            }
        });
        let r = run_scenario(&s, &SimConfig::with_seed(seed)).unwrap();
        let mut next = 0i64;
        for commit in &r.commits {
            let mut vals: Vec<i64> = commit.pairs.iter().map(|(_, v)| v.parse().unwrap()).collect();
            vals.sort();
            for v in vals {
                prop_assert_eq!(v, next);
                next += 1;
            }
        }
        prop_assert_eq!(next as usize, want);
    }

    #[test]
    fn guarded_receive_only_takes_matching_values(
        sent in prop::collection::vec(0i64..10, 1..4),
        receivers in 1usize..3,
        seed in any::<u64>(),
    ) {
        let s = Scenario::new("guarded", move || {
            let c = new_channel::<i64>();
            for (i, v) in sent.clone().into_iter().enumerate() {
                spawn_named(format!("s{i}"), move || sync(send_evt(c, v)));
            }
            for i in 0..receivers {
                spawn_named(format!("r{i}"), move || sync(guarded_recv_evt(c, |v: &i64| v % 2 == 0)));
            }
        });
        let r = run_scenario(&s, &SimConfig::with_seed(seed)).unwrap();
        for commit in &r.commits {
            for (_, v) in &commit.pairs {
                prop_assert_eq!(v.parse::<i64>().unwrap() % 2, 0);
            }
        }
    }

    #[test]
    fn timeout_gives_value_or_error_never_both(half_secs in 0u64..20, seed in any::<u64>()) {
        let delay = Duration::from_millis(500 * half_secs);
        let s = Scenario::new("timeout", move || {
            let c = new_channel::<i64>();
            spawn_named("sender", move || {
                sleep(delay);
                sync(send_evt(c, 7))
            });
            spawn_named("receiver", move || sync(timeout_evt(recv_evt(c), Duration::from_secs(5))));
        });
        let r = run_scenario(&s, &SimConfig::with_seed(seed)).unwrap();
        let receiver = r.outcome.result("receiver").unwrap().clone();
        let sender = r.outcome.result("sender").unwrap().clone();
        match receiver {
            TaskOutcome::Value(v) => {
                prop_assert_eq!(v, "7");
                prop_assert!(delay <= Duration::from_secs(5));
                prop_assert_eq!(sender, TaskOutcome::Value("()".into()));
            }
            TaskOutcome::Exception(e) => {
                prop_assert_eq!(e, "TimedOut(5.0)");
                prop_assert!(delay >= Duration::from_secs(5));
                prop_assert_eq!(sender, TaskOutcome::Pending);
            }
            TaskOutcome::Pending => prop_assert!(false, "receiver never resolved"),
        }
    }
}
