use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::gen::random_config;
use super::*;
use crate::event::{always_evt, never_evt, recv_evt, send_evt};
use crate::{spawn_named, sync};

fn pair_scenario() -> Scenario {
    Scenario::new("pair", || {
        let c = new_channel::<i64>();
        spawn_named("s", move || sync(send_evt(c, 5)));
        spawn_named("r", move || sync(recv_evt(c)));
    })
}

fn engine_classes(s: &Scenario, seeds: u64) -> BTreeSet<OutcomeClass> {
    (0..seeds)
        .map(|seed| run_scenario(s, &SimConfig::with_seed(seed)).unwrap().outcome)
        .collect()
}

#[test]
fn send_recv_pair_has_one_class() {
    let s = pair_scenario();
    let oracle = explore_outcomes(&s, &SimConfig::default()).unwrap();
    assert_eq!(oracle.len(), 1);
    let only = oracle.iter().next().unwrap();
    assert_eq!(only.result("r"), Some(&TaskOutcome::Value("5".into())));
    assert_eq!(only.pairs, vec![(ChannelId(1), "5".to_string())]);
    assert_eq!(engine_classes(&s, 16), oracle);
}

#[test]
fn two_receivers_one_sender_two_classes() {
    let s = Scenario::new("two-receivers", || {
        let c = new_channel::<i64>();
        spawn_named("s", move || sync(send_evt(c, 1)));
        spawn_named("r1", move || sync(recv_evt(c)));
        spawn_named("r2", move || sync(recv_evt(c)));
    });
    let oracle = explore_outcomes(&s, &SimConfig::default()).unwrap();
    assert_eq!(oracle.len(), 2);
    for class in &oracle {
        let pending = [class.result("r1"), class.result("r2")]
            .iter()
            .filter(|o| **o == Some(&TaskOutcome::Pending))
            .count();
        assert_eq!(pending, 1);
    }
    assert_eq!(engine_classes(&s, 64), oracle);
}

#[test]
fn never_stays_pending_and_quiescent() {
    let s = Scenario::new("never", || spawn_named("n", || sync(never_evt::<i64>())));
    let r = run_scenario(&s, &SimConfig::default()).unwrap();
    assert_eq!(r.status, RunStatus::Quiescent);
    assert_eq!(r.outcome.result("n"), Some(&TaskOutcome::Pending));
    assert_eq!(r.pending_syncs, 1);
    assert!(r.commits.is_empty());
}

#[test]
fn runs_are_deterministic() {
    let s = scenarios::lock_timeout(true);
    let a = run_scenario(&s, &SimConfig::with_seed(3)).unwrap();
    let b = run_scenario(&s, &SimConfig::with_seed(3)).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.outcome, b.outcome);
    assert_eq!(a.steps, b.steps);
}

#[test]
fn tie_break_is_seeded_and_both_sides_occur() {
    let s = Scenario::new("tie", || {
        spawn_named("t", || sync(crate::choose_evt(always_evt(1), always_evt(2))))
    });
    let seen: BTreeSet<String> = (0..32)
        .map(|seed| {
            run_scenario(&s, &SimConfig::with_seed(seed))
                .unwrap()
                .outcome
                .result("t")
                .unwrap()
                .to_string()
        })
        .collect();
    assert_eq!(seen, BTreeSet::from(["1".to_string(), "2".to_string()]));
    let again = run_scenario(&s, &SimConfig::with_seed(5)).unwrap().outcome;
    assert_eq!(again, run_scenario(&s, &SimConfig::with_seed(5)).unwrap().outcome);
}

#[test]
fn step_budget_is_reported() {
    let s = scenarios::lock_basic();
    let cfg = SimConfig {
        max_steps: 3,
        ..SimConfig::default()
    };
    assert_eq!(run_scenario(&s, &cfg).unwrap().status, RunStatus::StepBudgetExhausted);
}

#[test]
fn oracle_refuses_too_many_threads() {
    let s = Scenario::new("five", || {
        let c = new_channel::<i64>();
        for i in 0..5 {
            spawn_named(format!("r{i}"), move || sync(recv_evt(c)));
        }
    });
    assert!(matches!(
        explore_outcomes(&s, &SimConfig::default()),
        Err(HarnessError::BoundsExceeded(_))
    ));
}

#[test]
fn invalid_bounds_rejected() {
    let mut cfg = SimConfig::default();
    cfg.oracle.max_comms = 7;
    assert!(matches!(cfg.validate(), Err(HarnessError::InvalidConfig(_))));
    cfg.oracle.max_comms = 0;
    assert!(cfg.validate().is_err());
}

#[test]
fn engine_within_oracle_on_random_configs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..40 {
        let g = random_config(&mut rng);
        let s = g.scenario();
        let oracle = explore_outcomes(&s, &SimConfig::default()).unwrap();
        for seed in 0..8 {
            let got = run_scenario(&s, &SimConfig::with_seed(seed)).unwrap();
            assert!(
                oracle.contains(&got.outcome),
                "{g:?}\nengine {}\noracle {oracle:?}",
                got.outcome
            );
        }
    }
}

#[test]
fn timers_fire_in_virtual_time() {
    let s = scenarios::timeout_delivers();
    let r = run_scenario(&s, &SimConfig::default()).unwrap();
    assert_eq!(
        r.outcome.result("receiver"),
        Some(&TaskOutcome::Value("\"5 at t=1.0\"".into()))
    );
    assert!(!r.trace.iter().any(|t| t.kind == crate::TraceKind::TimerFire));
}

#[test]
fn guarded_receive_has_one_class() {
    let oracle = explore_outcomes(&scenarios::guarded_recv(), &SimConfig::default()).unwrap();
    assert_eq!(oracle.len(), 1);
    let only = oracle.iter().next().unwrap();
    assert_eq!(only.result("receiver"), Some(&TaskOutcome::Value("8".into())));
    assert_eq!(only.result("sender-3"), Some(&TaskOutcome::Pending));
}

#[test]
fn thunked_pair_receive_is_distinguishable() {
    let cfg = SimConfig::default();
    let one_sync = explore_outcomes(&scenarios::either_order(false), &cfg).unwrap();
    let thunked = explore_outcomes(&scenarios::either_order(true), &cfg).unwrap();
    assert!(one_sync.iter().all(|c| c.pairs.is_empty()));
    assert!(thunked
        .iter()
        .all(|c| c.result("receiver") == Some(&TaskOutcome::Value("(4, 5)".into()))));
    assert!(one_sync.is_disjoint(&thunked));
}

#[test]
fn timer_fires_are_traced() {
    let s = Scenario::new("alone", || {
        let c = new_channel::<i64>();
        spawn_named("r", move || {
            sync(crate::timeout_evt(recv_evt(c), std::time::Duration::from_secs(5)))
        });
    });
    let r = run_scenario(&s, &SimConfig::default()).unwrap();
    let kinds: Vec<_> = r.trace.iter().map(|t| t.kind).collect();
    assert!(kinds.contains(&crate::TraceKind::TimerSet));
    assert!(kinds.contains(&crate::TraceKind::TimerFire));
}
