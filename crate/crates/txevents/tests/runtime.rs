//! The engine hosted on real OS threads.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use txevents::patterns::{
    acquire_lock_evt, complex_increment_client, increment_server, k_receive_event, mk_lock_server, release_lock_evt,
    simple_increment_client,
};
use txevents::{
    n_way_rendezvous_evt, new_channel, recv_evt, send_evt, sync, then_evt, thunk_wrap, timeout_evt, EngineConfig,
    RendezvousRole, Runtime, SyncError,
};

fn on<R: Send + 'static>(rt: &Runtime, f: impl FnOnce() -> R + Send + 'static) -> thread::JoinHandle<R> {
    let rt = rt.clone();
    thread::spawn(move || rt.enter(f))
}

#[test]
fn increment_server_serves_concurrent_clients() {
    let rt = Runtime::new(EngineConfig::default());
    let c = rt.enter(increment_server);
    let clients: Vec<_> = (0..6)
        .map(|i| {
            on(&rt, move || {
                (0..5)
                    .map(|_| {
                        if i % 2 == 0 {
                            simple_increment_client(c).map(|v| vec![v])
                        } else {
                            // Not necessarily consecutive.
                            sync(k_receive_event(c, 2))
                        }
                    })
                    .collect::<Result<Vec<_>, SyncError>>()
            })
        })
        .collect();
    let mut seen: Vec<i64> = clients
        .into_iter()
        .flat_map(|h| h.join().unwrap().unwrap())
        .flatten()
        .collect();
    seen.sort();
    assert_eq!(seen, (0..45).collect::<Vec<i64>>());
    rt.shutdown();
}

#[test]
fn lone_complex_client_gets_consecutive_values() {
    let rt = Runtime::new(EngineConfig::default());
    rt.enter(|| {
        let c = increment_server();
        assert_eq!(complex_increment_client(c), Ok(1));
        assert_eq!(complex_increment_client(c), Ok(5));
        assert_eq!(simple_increment_client(c), Ok(4));
    });
    rt.shutdown();
}

#[test]
fn lock_server_excludes_across_threads() {
    let rt = Runtime::new(EngineConfig::default());
    let locks = rt.enter(mk_lock_server);
    let inside = Arc::new(AtomicBool::new(false));
    let entries = Arc::new(AtomicUsize::new(0));
    let workers: Vec<_> = (0..4)
        .map(|_| {
            let (inside, entries) = (inside.clone(), entries.clone());
            on(&rt, move || {
                for _ in 0..10 {
                    sync(acquire_lock_evt(locks, 1))?;
                    assert!(!inside.swap(true, Ordering::SeqCst), "two holders of lock 1");
                    entries.fetch_add(1, Ordering::SeqCst);
                    thread::yield_now();
                    inside.store(false, Ordering::SeqCst);
                    sync(release_lock_evt(locks, 1))?;
                }
                Ok::<_, SyncError>(())
            })
        })
        .collect();
    for w in workers {
        w.join().unwrap().unwrap();
    }
    assert_eq!(entries.load(Ordering::SeqCst), 40);
    rt.shutdown();
}

#[test]
fn atomic_two_acquire_waits_for_both() {
    let rt = Runtime::new(EngineConfig::default());
    rt.enter(|| {
        let locks = mk_lock_server();
        let both = move || then_evt(acquire_lock_evt(locks, 1), move |()| acquire_lock_evt(locks, 2));
        sync(acquire_lock_evt(locks, 2)).unwrap();
        assert!(matches!(
            sync(timeout_evt(both(), Duration::from_millis(40))),
            Err(SyncError::TimedOut(_))
        ));
        // Lock 1 was not taken by the failed attempt.
        sync(acquire_lock_evt(locks, 1)).unwrap();
        sync(release_lock_evt(locks, 1)).unwrap();
        sync(release_lock_evt(locks, 2)).unwrap();
        sync(both()).unwrap();
    });
    rt.shutdown();
}

#[test]
fn rendezvous_releases_all_parties_together() {
    let rt = Runtime::new(EngineConfig::default());
    let chans: Vec<_> = rt.enter(|| (0..3).map(|_| new_channel::<()>()).collect());
    let members: Vec<_> = (0..3)
        .map(|i| {
            let chans = chans.clone();
            on(&rt, move || {
                sync(n_way_rendezvous_evt(&chans, RendezvousRole::Member(i)))
            })
        })
        .collect();
    thread::sleep(Duration::from_millis(20));
    assert!(members.iter().all(|h| !h.is_finished()));
    rt.sync(n_way_rendezvous_evt(&chans, RendezvousRole::Leader)).unwrap();
    for m in members {
        assert_eq!(m.join().unwrap(), Ok(()));
    }
}

#[test]
fn thunk_runs_only_when_forced() {
    let rt = Runtime::new(EngineConfig::default());
    let runs = Arc::new(AtomicUsize::new(0));
    let c = new_channel::<i64>();
    let sender = on(&rt, move || sync(send_evt(c, 20)));
    let counted = runs.clone();
    let t = rt
        .sync(thunk_wrap(recv_evt(c), move |v: i64| {
            counted.fetch_add(1, Ordering::SeqCst);
            v + 1
        }))
        .unwrap();
    sender.join().unwrap().unwrap();
    assert_eq!(runs.load(Ordering::SeqCst), 0);
    assert_eq!(t.force(), Ok(21));
    assert_eq!(t.force(), Ok(21));
    assert_eq!(runs.load(Ordering::SeqCst), 2);
}
