//! Worked protocols: increment servers and their clients, and a lock server
//! that needs no abort actions.

use crate::combinators::server_loop;
use crate::context::{spawn_named, sync};
use crate::error::SyncError;
use crate::event::{always_evt, choose_evt, never_evt, new_channel, recv_evt, send_evt, then_evt, Channel, Event};

/// A server that sends 0, 1, 2, ... on its channel, one send per
/// synchronization.
///
/// Clients that need two values in one synchronization can never commit with
/// it: the server's event completes after a single send.
pub fn simple_increment_server() -> Channel<i64> {
    let c = new_channel();
    spawn_named("simple-server", move || -> Result<(), SyncError> {
        let mut y = 0;
        loop {
            sync(send_evt(c, y))?;
            y += 1;
        }
    });
    c
}

fn counting_sends(c: Channel<i64>, x: i64) -> Event<i64> {
    then_evt(send_evt(c, x), move |()| {
        choose_evt(always_evt(x + 1), counting_sends(c, x + 1))
    })
}

/// Hand-rolled multi-send server: after each send the event either returns
/// the next counter or keeps sending in the same synchronization.
pub fn better_increment_server() -> Channel<i64> {
    let c = new_channel();
    spawn_named("better-server", move || -> Result<(), SyncError> {
        let mut x = 0;
        loop {
            x = sync(counting_sends(c, x))?;
        }
    });
    c
}

/// The increment server expressed with [`server_loop`].
pub fn increment_server() -> Channel<i64> {
    let c = new_channel();
    spawn_named("increment-server", move || {
        server_loop(send_evt(c, 0), 0i64, move |((), x)| (send_evt(c, x + 1), x + 1))
    });
    c
}

pub fn simple_increment_client(c: Channel<i64>) -> Result<i64, SyncError> {
    sync(recv_evt(c))
}

/// Two receives and their sum, in one event.
pub fn complex_increment_event(c: Channel<i64>) -> Event<i64> {
    then_evt(recv_evt(c), move |x: i64| {
        then_evt(recv_evt(c), move |y: i64| always_evt(x + y))
    })
}

pub fn complex_increment_client(c: Channel<i64>) -> Result<i64, SyncError> {
    sync(complex_increment_event(c))
}

/// A client that needs `k` values from the server in a single
/// synchronization; returns them in order.
pub fn k_receive_event(c: Channel<i64>, k: usize) -> Event<Vec<i64>> {
    fn go(c: Channel<i64>, left: usize, acc: Vec<i64>) -> Event<Vec<i64>> {
        if left == 0 {
            return always_evt(acc);
        }
        then_evt(recv_evt(c), move |x: i64| {
            let mut acc = acc.clone();
            acc.push(x);
            go(c, left - 1, acc)
        })
    }
    go(c, k, Vec::new())
}

/// Two clients that each take one value from `server` and exchange it with
/// each other over `peer`, all in one event per client. The first returns
/// its own value, the second the sum of both.
pub fn cross_talk_events(server: Channel<i64>, peer: Channel<i64>) -> (Event<i64>, Event<i64>) {
    let first = then_evt(recv_evt(server), move |x: i64| {
        then_evt(send_evt(peer, x), move |()| always_evt(x))
    });
    let second = then_evt(recv_evt(server), move |y: i64| {
        then_evt(recv_evt(peer), move |x: i64| always_evt(x + y))
    });
    (first, second)
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum LockRequest {
    Acquire(i64),
    Release(i64),
}

/// Ids of the locks currently held, most recent first.
pub type HeldLocks = Vec<i64>;

/// Client-side handle: only the request channel. The held-lock list lives in
/// the server task.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct LockServerHandle {
    pub request_channel: Channel<LockRequest>,
}

/// One iteration of the lock server: receive a request and compute the new
/// held set. Acquiring a held lock yields `never_evt`, so the request never
/// happened as far as any transaction is concerned.
pub fn lock_server_event(req: Channel<LockRequest>, held: HeldLocks) -> Event<HeldLocks> {
    then_evt(recv_evt(req), move |r: LockRequest| match r {
        LockRequest::Acquire(id) => {
            if held.contains(&id) {
                never_evt()
            } else {
                let mut next = vec![id];
                next.extend(held.iter().copied());
                always_evt(next)
            }
        }
        LockRequest::Release(id) => always_evt(held.iter().copied().filter(|h| *h != id).collect()),
    })
}

pub fn mk_lock_server() -> LockServerHandle {
    let req = new_channel();
    spawn_named("lock-server", move || {
        server_loop(lock_server_event(req, Vec::new()), (), move |(held, ())| {
            (lock_server_event(req, held), ())
        })
    });
    LockServerHandle { request_channel: req }
}

pub fn acquire_lock_evt(s: LockServerHandle, id: i64) -> Event<()> {
    send_evt(s.request_channel, LockRequest::Acquire(id))
}

/// Releasing a lock that is not held commits and changes nothing.
pub fn release_lock_evt(s: LockServerHandle, id: i64) -> Event<()> {
    send_evt(s.request_channel, LockRequest::Release(id))
}
