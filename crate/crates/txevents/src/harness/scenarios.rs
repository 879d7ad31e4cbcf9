//! Named scenarios: the increment-server protocols, the thunked-wrapper
//! contrast, the lock server, rendezvous, guarded receive and timeouts.

use std::time::Duration;

use super::{RunReport, Scenario, TaskOutcome};
use crate::combinators::{
    guarded_recv_evt, n_way_rendezvous_evt, sync_thunked, timeout_evt, try_thunk_wrap, RendezvousRole,
};
use crate::context::{now, sleep, spawn_named, sync};
use crate::error::SyncError;
use crate::event::{always_evt, choose_evt, new_channel, recv_evt, send_evt, then_evt, Channel, Event};
use crate::patterns::{
    acquire_lock_evt, better_increment_server, complex_increment_client, cross_talk_events, increment_server,
    mk_lock_server, release_lock_evt, simple_increment_client, simple_increment_server,
};

pub struct Registered {
    pub name: &'static str,
    pub about: &'static str,
    pub build: fn() -> Scenario,
    /// One-line human summary of a run.
    pub summary: fn(&RunReport) -> String,
}

pub fn registry() -> Vec<Registered> {
    vec![
        Registered {
            name: "simple-client-vs-simple-server",
            about: "a client syncing twice on the one-send server",
            build: simple_client_vs_simple_server,
            summary: |r| client_result(r, "client"),
        },
        Registered {
            name: "complex-vs-simple-server",
            about: "a two-receive client against the one-send server: deadlock",
            build: complex_vs_simple_server,
            summary: |r| client_result(r, "client"),
        },
        Registered {
            name: "complex-vs-loop-server",
            about: "a two-receive client against the server-loop server",
            build: complex_vs_loop_server,
            summary: |r| client_result(r, "client"),
        },
        Registered {
            name: "increment-complex-client",
            about: "a two-receive client against the hand-rolled multi-send server",
            build: increment_complex_client,
            summary: |r| client_result(r, "client"),
        },
        Registered {
            name: "two-client-cross-talk",
            about: "two clients that also talk to each other, one-send server: no commit",
            build: || cross_talk(false),
            summary: cross_talk_summary,
        },
        Registered {
            name: "two-client-cross-talk-loop",
            about: "the same two clients against the server-loop server",
            build: || cross_talk(true),
            summary: cross_talk_summary,
        },
        Registered {
            name: "either-order-thunkwrap",
            about: "thunked two receives in either order against a two-sync sender",
            build: || either_order(true),
            summary: |r| client_result(r, "receiver"),
        },
        Registered {
            name: "wrap-contrast-failure",
            about: "the same receives in one synchronization: cannot commit",
            build: || either_order(false),
            summary: |r| client_result(r, "receiver"),
        },
        Registered {
            name: "lock-basic",
            about: "two clients acquire and release the same lock",
            build: lock_basic,
            summary: |r| format!("{}; {}", client_result(r, "client-a"), client_result(r, "client-b")),
        },
        Registered {
            name: "lock-release",
            about: "a blocked acquire commits once the holder releases",
            build: lock_release,
            summary: |r| client_result(r, "waiter"),
        },
        Registered {
            name: "lock-timeout",
            about: "an acquire of a held lock times out after 5.0 without a trace at the server",
            build: || lock_timeout(true),
            summary: |r| client_result(r, "waiter"),
        },
        Registered {
            name: "lock-atomic-two-acquires",
            about: "acquiring two locks in one transaction",
            build: lock_atomic_two_acquires,
            summary: |r| format!("{}; {}", client_result(r, "client"), txn_shape(r)),
        },
        Registered {
            name: "lock-atomic-blocked",
            about: "a two-lock acquire blocked on its second lock takes neither",
            build: lock_atomic_blocked,
            summary: |r| format!("{}; {}", client_result(r, "client"), client_result(r, "probe")),
        },
        Registered {
            name: "nway-3",
            about: "three-party rendezvous in one transaction",
            build: || nway(3, true),
            summary: txn_shape,
        },
        Registered {
            name: "nway-3-missing-member",
            about: "three-party rendezvous with one party absent",
            build: || nway(3, false),
            summary: txn_shape,
        },
        Registered {
            name: "guarded-recv",
            about: "a receive guarded by x >= 5 against senders of 3 and 8",
            build: guarded_recv,
            summary: |r| client_result(r, "receiver"),
        },
        Registered {
            name: "timeout-delivers",
            about: "a partner arrives at t=1.0, before the 5.0 deadline",
            build: timeout_delivers,
            summary: |r| client_result(r, "receiver"),
        },
    ]
}

pub fn find(name: &str) -> Option<Registered> {
    registry().into_iter().find(|r| r.name == name)
}

fn unquote(s: &str) -> &str {
    s.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(s)
}

fn no_commits(r: &RunReport) -> Option<String> {
    r.commits
        .is_empty()
        .then(|| format!("no commits; {} syncs pending", r.pending_syncs))
}

fn client_result(r: &RunReport, task: &str) -> String {
    if let Some(s) = no_commits(r) {
        return s;
    }
    match r.task(task).map(|t| &t.outcome) {
        Some(TaskOutcome::Value(v)) => format!("{task} result = {}", unquote(v)),
        Some(TaskOutcome::Exception(e)) => format!("{task} raised {e}"),
        Some(TaskOutcome::Pending) | None => format!("{task} pending"),
    }
}

fn txn_shape(r: &RunReport) -> String {
    if let Some(s) = no_commits(r) {
        return s;
    }
    let shapes: Vec<String> = r
        .commits
        .iter()
        .map(|c| format!("{} participants, {} pairs", c.participants.len(), c.pairs.len()))
        .collect();
    format!("{} commit(s): {}", r.commits.len(), shapes.join("; "))
}

fn cross_talk_summary(r: &RunReport) -> String {
    if let Some(s) = no_commits(r) {
        return s;
    }
    format!("{}; {}", client_result(r, "first"), client_result(r, "second"))
}

fn secs(d: Duration) -> String {
    format!("{:.1}", d.as_secs_f64())
}

pub fn simple_client_vs_simple_server() -> Scenario {
    Scenario::new("simple-client-vs-simple-server", || {
        let c = simple_increment_server();
        spawn_named("client", move || {
            let a = simple_increment_client(c)?;
            let b = simple_increment_client(c)?;
            Ok((a, b))
        });
    })
}

pub fn complex_vs_simple_server() -> Scenario {
    Scenario::new("complex-vs-simple-server", || {
        let c = simple_increment_server();
        spawn_named("client", move || complex_increment_client(c));
    })
}

pub fn complex_vs_loop_server() -> Scenario {
    Scenario::new("complex-vs-loop-server", || {
        let c = increment_server();
        spawn_named("client", move || complex_increment_client(c));
    })
}

pub fn increment_complex_client() -> Scenario {
    Scenario::new("increment-complex-client", || {
        let c = better_increment_server();
        spawn_named("client", move || complex_increment_client(c));
    })
}

/// Two clients that each take a value from the server and exchange with each
/// other in the same event; against the loop server when `loop_server`.
pub fn cross_talk(loop_server: bool) -> Scenario {
    let name = if loop_server {
        "two-client-cross-talk-loop"
    } else {
        "two-client-cross-talk"
    };
    Scenario::new(name, move || {
        let server = if loop_server {
            increment_server()
        } else {
            simple_increment_server()
        };
        let peer = new_channel();
        let (first, second) = cross_talk_events(server, peer);
        spawn_named("first", move || sync(first));
        spawn_named("second", move || sync(second));
    })
}

/// Receives on `c1` and `c2` in either order within one synchronization.
pub fn pair_receive_evt(c1: Channel<i64>, c2: Channel<i64>) -> Event<(i64, i64)> {
    choose_evt(
        then_evt(recv_evt(c1), move |x: i64| {
            then_evt(recv_evt(c2), move |y: i64| always_evt((x, y)))
        }),
        then_evt(recv_evt(c2), move |y: i64| {
            then_evt(recv_evt(c1), move |x: i64| always_evt((x, y)))
        }),
    )
}

/// The thunked version: the first receive commits alone, the second runs as
/// its own synchronization when the thunk is forced.
pub fn thunked_pair_receive(c1: Channel<i64>, c2: Channel<i64>) -> Result<(i64, i64), SyncError> {
    sync_thunked(choose_evt(
        try_thunk_wrap(recv_evt(c1), move |x: i64| Ok((x, sync(recv_evt(c2))?))),
        try_thunk_wrap(recv_evt(c2), move |y: i64| Ok((sync(recv_evt(c1))?, y))),
    ))
}

/// A sender doing `sync(send c1 4); sync(send c2 5)` against the thunked
/// (`thunked`) or one-synchronization pair receive.
pub fn either_order(thunked: bool) -> Scenario {
    let name = if thunked {
        "either-order-thunkwrap"
    } else {
        "wrap-contrast-failure"
    };
    Scenario::new(name, move || {
        let c1 = new_channel::<i64>();
        let c2 = new_channel::<i64>();
        spawn_named("sender", move || {
            sync(send_evt(c1, 4))?;
            sync(send_evt(c2, 5))
        });
        if thunked {
            spawn_named("receiver", move || thunked_pair_receive(c1, c2));
        } else {
            spawn_named("receiver", move || sync(pair_receive_evt(c1, c2)));
        }
    })
}

pub fn lock_basic() -> Scenario {
    Scenario::new("lock-basic", || {
        let s = mk_lock_server();
        for name in ["client-a", "client-b"] {
            spawn_named(name, move || {
                sync(acquire_lock_evt(s, 1))?;
                sync(release_lock_evt(s, 1))?;
                Ok("acquired and released lock 1")
            });
        }
    })
}

pub fn lock_release() -> Scenario {
    Scenario::new("lock-release", || {
        let s = mk_lock_server();
        let go = new_channel::<()>();
        spawn_named("holder", move || {
            sync(acquire_lock_evt(s, 1))?;
            sync(send_evt(go, ()))?;
            sleep(Duration::from_secs(1));
            sync(release_lock_evt(s, 1))
        });
        spawn_named("waiter", move || {
            sync(recv_evt(go))?;
            sync(acquire_lock_evt(s, 1))?;
            Ok(format!("acquired lock 1 at t={}", secs(now())))
        });
    })
}

/// The holder takes lock 1 and keeps it until t=10.0. The waiter first tries
/// `timeout_evt(acquire 1, 5.0)` (or, without `request`, just sleeps 5.0),
/// then acquires lock 1 normally. The waiter's result is a pair: what
/// happened first, and when the follow-up acquire committed.
pub fn lock_timeout(request: bool) -> Scenario {
    let name = if request {
        "lock-timeout"
    } else {
        "lock-timeout-control"
    };
    Scenario::new(name, move || {
        let s = mk_lock_server();
        let go = new_channel::<()>();
        spawn_named("holder", move || {
            sync(acquire_lock_evt(s, 1))?;
            sync(send_evt(go, ()))?;
            sleep(Duration::from_secs(10));
            sync(release_lock_evt(s, 1))
        });
        spawn_named("waiter", move || {
            sync(recv_evt(go))?;
            let first = if request {
                match sync(timeout_evt(acquire_lock_evt(s, 1), Duration::from_secs_f64(5.0))) {
                    Ok(()) => format!("acquired at t={}", secs(now())),
                    Err(SyncError::TimedOut(_)) => format!("TimedOut at t={}", secs(now())),
                    Err(e) => return Err(e),
                }
            } else {
                sleep(Duration::from_secs_f64(5.0));
                format!("slept until t={}", secs(now()))
            };
            sync(acquire_lock_evt(s, 1))?;
            Ok(format!("{first}, then acquired at t={}", secs(now())))
        });
    })
}

pub fn atomic_two_acquires_evt(s: crate::patterns::LockServerHandle) -> Event<()> {
    then_evt(acquire_lock_evt(s, 1), move |()| acquire_lock_evt(s, 2))
}

pub fn lock_atomic_two_acquires() -> Scenario {
    Scenario::new("lock-atomic-two-acquires", || {
        let s = mk_lock_server();
        spawn_named("client", move || {
            sync(atomic_two_acquires_evt(s))?;
            Ok("holds locks 1 and 2")
        });
    })
}

/// Lock 2 is held elsewhere, so the two-lock acquire cannot commit and lock 1
/// stays free for the probe.
pub fn lock_atomic_blocked() -> Scenario {
    Scenario::new("lock-atomic-blocked", || {
        let s = mk_lock_server();
        let go = new_channel::<()>();
        spawn_named("holder", move || {
            sync(acquire_lock_evt(s, 2))?;
            sync(send_evt(go, ()))
        });
        spawn_named("client", move || {
            sync(recv_evt(go))?;
            sync(atomic_two_acquires_evt(s))?;
            Ok("holds locks 1 and 2")
        });
        spawn_named("probe", move || {
            sleep(Duration::from_secs(1));
            sync(acquire_lock_evt(s, 1))?;
            Ok("acquired lock 1")
        });
    })
}

/// `n` parties over a star of `n - 1` channels; without `all_present` the
/// last member never shows up.
pub fn nway(n: usize, all_present: bool) -> Scenario {
    let name = if all_present { "nway-3" } else { "nway-3-missing-member" };
    Scenario::new(name, move || {
        let chans: Vec<Channel<()>> = (0..n - 1).map(|_| new_channel()).collect();
        let leader = n_way_rendezvous_evt(&chans, RendezvousRole::Leader);
        spawn_named("leader", move || sync(leader));
        let members = if all_present { n - 1 } else { n - 2 };
        for i in 0..members {
            let ev = n_way_rendezvous_evt(&chans, RendezvousRole::Member(i));
            spawn_named(format!("member-{i}"), move || sync(ev));
        }
    })
}

pub fn guarded_recv() -> Scenario {
    Scenario::new("guarded-recv", || {
        let c = new_channel::<i64>();
        spawn_named("sender-3", move || sync(send_evt(c, 3)));
        spawn_named("sender-8", move || sync(send_evt(c, 8)));
        spawn_named("receiver", move || sync(guarded_recv_evt(c, |x: &i64| *x >= 5)));
    })
}

pub fn timeout_delivers() -> Scenario {
    Scenario::new("timeout-delivers", || {
        let c = new_channel::<i64>();
        spawn_named("sender", move || {
            sleep(Duration::from_secs(1));
            sync(send_evt(c, 5))
        });
        spawn_named("receiver", move || {
            let v = sync(timeout_evt(recv_evt(c), Duration::from_secs(5)))?;
            Ok(format!("{v} at t={}", secs(now())))
        });
    })
}
