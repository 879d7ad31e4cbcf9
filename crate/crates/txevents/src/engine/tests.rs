use std::time::Duration;

use super::*;
use crate::combinators::timeout_evt;
use crate::event::*;
use crate::patterns::complex_increment_event;

fn coord() -> Coordinator {
    Coordinator::new(EngineConfig {
        validate_commits: true,
        ..EngineConfig::default()
    })
}

fn reg<T: crate::Payload>(c: &mut Coordinator, e: Event<T>) -> SyncId {
    c.register(&e.erase(), Duration::ZERO).0
}

fn resolved(fx: &Effects, id: SyncId) -> Option<&Result<Value, SyncError>> {
    fx.resolved.iter().find(|(s, _)| *s == id).map(|(_, r)| r)
}

fn kinds(c: &Coordinator) -> Vec<TraceKind> {
    c.trace().iter().map(|r| r.kind).collect()
}

#[test]
fn always_commits_alone() {
    let mut c = coord();
    let id = reg(&mut c, always_evt(7i64));
    let fx = c.settle(Duration::ZERO);
    assert_eq!(resolved(&fx, id), Some(&Ok(Value::new(7i64))));
    assert_eq!(fx.commits.len(), 1);
    assert!(fx.commits[0].matching.is_empty());
    assert!(!c.is_pending(id));
}

#[test]
fn pair_commits_with_trace_order() {
    let mut c = coord();
    let ch = new_channel::<i64>();
    let s = reg(&mut c, send_evt(ch, 5));
    let r = reg(&mut c, recv_evt(ch));
    let fx = c.settle(Duration::ZERO);
    assert_eq!(resolved(&fx, s), Some(&Ok(Value::unit())));
    assert_eq!(resolved(&fx, r), Some(&Ok(Value::new(5i64))));
    let txn = &fx.commits[0];
    assert_eq!(txn.matching.len(), 1);
    assert_eq!(txn.matching[0].sender, s);
    assert_eq!(txn.validate(), Ok(()));

    let trace = c.trace();
    let commit = trace.iter().position(|t| t.kind == TraceKind::Commit).unwrap();
    let matched = trace
        .iter()
        .position(|t| t.kind == TraceKind::TentativeMatch && t.txn == Some(txn.id))
        .unwrap();
    assert!(matched < commit);
    assert_eq!(trace[commit].txn, Some(txn.id));
    let seqs: Vec<u64> = trace.iter().map(|t| t.seq).collect();
    assert!(seqs.windows(2).all(|w| w[0] + 1 == w[1]));
}

#[test]
fn second_commit_of_same_transaction_rejected() {
    let mut c = coord();
    let ch = new_channel::<i64>();
    reg(&mut c, send_evt(ch, 1));
    reg(&mut c, recv_evt(ch));
    let SearchOutcome::Found(txn) = c.find_transaction() else {
        panic!("expected a transaction")
    };
    c.commit(txn.clone()).unwrap();
    assert!(matches!(c.commit(txn), Err(CommitError::AlreadyResolved(_))));
}

#[test]
fn unmatched_offers_stay_pending() {
    let mut c = coord();
    let a = new_channel::<i64>();
    let b = new_channel::<i64>();
    let s = reg(&mut c, send_evt(a, 1));
    let r = reg(&mut c, recv_evt(b));
    let fx = c.settle(Duration::ZERO);
    assert!(fx.resolved.is_empty());
    assert!(c.is_pending(s) && c.is_pending(r));
    assert!(!c.is_dirty());
    assert!(matches!(c.find_transaction(), SearchOutcome::NoneFound));
}

#[test]
fn never_is_pruned_and_pending() {
    let mut c = coord();
    let id = reg(&mut c, never_evt::<()>());
    assert!(c.settle(Duration::ZERO).resolved.is_empty());
    assert!(c.is_pending(id));
    assert!(kinds(&c).contains(&TraceKind::Prune));
}

#[test]
fn multi_pair_transaction_with_loop_server() {
    let mut c = coord();
    let ch = new_channel::<i64>();
    let server = reg(
        &mut c,
        crate::evt_loop(send_evt(ch, 0), 0i64, move |((), x)| (send_evt(ch, x + 1), x + 1)),
    );
    let client = reg(&mut c, complex_increment_event(ch));
    let fx = c.settle(Duration::ZERO);
    assert_eq!(resolved(&fx, client), Some(&Ok(Value::new(1i64))));
    assert_eq!(resolved(&fx, server), Some(&Ok(Value::new(((), 1i64)))));
    assert_eq!(fx.commits[0].matching.len(), 2);
}

#[test]
fn one_send_server_cannot_serve_two_receives() {
    let mut c = coord();
    let ch = new_channel::<i64>();
    reg(&mut c, send_evt(ch, 0));
    let client = reg(&mut c, complex_increment_event(ch));
    assert!(c.settle(Duration::ZERO).resolved.is_empty());
    assert!(c.is_pending(client));
    assert!(kinds(&c).contains(&TraceKind::TentativeMatch));
    assert!(!kinds(&c).contains(&TraceKind::Commit));
}

#[test]
fn comm_bound_prunes_deep_unrolling() {
    let mut c = Coordinator::new(EngineConfig {
        max_comms_per_txn: 1,
        ..EngineConfig::default()
    });
    let ch = new_channel::<i64>();
    reg(
        &mut c,
        crate::evt_loop(send_evt(ch, 0), 0i64, move |((), x)| (send_evt(ch, x + 1), x + 1)),
    );
    let client = reg(&mut c, complex_increment_event(ch));
    assert!(c.settle(Duration::ZERO).resolved.is_empty());
    assert!(c.is_pending(client));
    assert!(c
        .trace()
        .iter()
        .any(|t| t.kind == TraceKind::Prune && t.value.as_deref() == Some("comm bound reached")));
}

#[test]
fn raise_during_search_aborts_only_the_raiser() {
    let mut c = coord();
    let ch = new_channel::<i64>();
    let s = reg(&mut c, send_evt(ch, 1));
    let r = reg(
        &mut c,
        then_evt(recv_evt(ch), |_: i64| -> Result<Event<i64>, SyncError> {
            Err(SyncError::raise("boom"))
        }),
    );
    let fx = c.settle(Duration::ZERO);
    assert_eq!(resolved(&fx, r), Some(&Err(SyncError::raise("boom"))));
    assert!(c.is_pending(s));
    assert!(kinds(&c).contains(&TraceKind::Exception));
    assert!(kinds(&c).contains(&TraceKind::Abort));
}

#[test]
fn root_raise_aborts_at_registration() {
    let mut c = coord();
    let ev = then_evt(always_evt(()), |()| -> Result<Event<()>, SyncError> {
        Err(SyncError::raise("early"))
    });
    let (id, fx) = c.register(&ev.erase(), Duration::ZERO);
    assert_eq!(resolved(&fx, id), Some(&Err(SyncError::raise("early"))));
    assert!(!c.is_pending(id));
}

#[test]
fn timeout_fires_at_deadline() {
    let mut c = coord();
    let ch = new_channel::<i64>();
    let ev = timeout_evt(recv_evt(ch), Duration::from_secs(5));
    let (id, fx) = c.register(&ev.erase(), Duration::from_secs(1));
    assert_eq!(fx.timers_set.len(), 1);
    let (key, deadline) = fx.timers_set[0];
    assert_eq!(deadline, Duration::from_secs(6));
    assert!(c.settle(Duration::from_secs(1)).resolved.is_empty());
    let fx = c.fire_timer(key, deadline);
    assert_eq!(
        resolved(&fx, id),
        Some(&Err(SyncError::TimedOut(Duration::from_secs(5))))
    );
    // Stale keys are ignored.
    assert!(c.fire_timer(key, deadline).resolved.is_empty());
}

#[test]
fn commit_cancels_sibling_timer() {
    let mut c = coord();
    let ch = new_channel::<i64>();
    let (r, fx) = c.register(
        &timeout_evt(recv_evt(ch), Duration::from_secs(5)).erase(),
        Duration::ZERO,
    );
    let key = fx.timers_set[0].0;
    reg(&mut c, send_evt(ch, 9));
    let fx = c.settle(Duration::ZERO);
    assert_eq!(resolved(&fx, r), Some(&Ok(Value::new(9i64))));
    assert_eq!(fx.timers_cancelled, vec![key]);
    let before = c.trace().len();
    assert!(c.fire_timer(key, Duration::from_secs(5)).resolved.is_empty());
    assert_eq!(c.trace().len(), before);
}

#[test]
fn same_seed_same_trace() {
    let a = new_channel::<i64>();
    let run = |seed| {
        let mut c = Coordinator::new(EngineConfig::with_seed(seed));
        for v in 0..3 {
            reg(&mut c, send_evt(a, v));
        }
        for _ in 0..3 {
            reg(&mut c, choose_evt(recv_evt(a), always_evt(-1)));
        }
        c.settle(Duration::ZERO);
        c.trace().to_vec()
    };
    assert_eq!(run(4), run(4));
}

#[test]
fn shutdown_resolves_everything() {
    let mut c = coord();
    let ids: Vec<SyncId> = (0..3).map(|_| reg(&mut c, never_evt::<()>())).collect();
    let fx = c.shutdown();
    for id in ids {
        assert_eq!(resolved(&fx, id), Some(&Err(SyncError::Shutdown)));
    }
    assert_eq!(c.pending().count(), 0);
}

#[test]
fn config_validation() {
    assert!(EngineConfig::default().validate().is_ok());
    let bad = EngineConfig {
        max_comms_per_txn: 0,
        ..EngineConfig::default()
    };
    assert_eq!(bad.validate(), Err(ConfigError::ZeroBound("max_comms_per_txn")));
}
