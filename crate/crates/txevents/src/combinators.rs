//! Derived combinators: thunked wrappers, timeouts, guarded receive, n-way
//! rendezvous, and the server-loop pair.

use std::convert::Infallible;
use std::fmt;
use std::panic::{self, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Duration;

use crate::context::sync;
use crate::error::{panic_to_error, SyncError};
use crate::event::{always_evt, choose_evt, delay_evt, never_evt, recv_evt, send_evt, then_evt, Channel, Event};
use crate::value::Payload;

/// Deferred post-processing, run by [`Thunk::force`] after a
/// synchronization has committed.
pub struct Thunk<T> {
    f: Arc<dyn Fn() -> Result<T, SyncError> + Send + Sync>,
}

impl<T> Thunk<T> {
    pub fn new(f: impl Fn() -> T + Send + Sync + 'static) -> Self {
        Thunk {
            f: Arc::new(move || Ok(f())),
        }
    }

    pub fn fallible(f: impl Fn() -> Result<T, SyncError> + Send + Sync + 'static) -> Self {
        Thunk { f: Arc::new(f) }
    }

    /// Runs the deferred work; each call runs it again. A panic inside is
    /// reported as [`SyncError::Raised`].
    pub fn force(&self) -> Result<T, SyncError> {
        panic::catch_unwind(AssertUnwindSafe(|| (self.f)())).unwrap_or_else(|p| Err(panic_to_error(p)))
    }
}

impl<T> Clone for Thunk<T> {
    fn clone(&self) -> Self {
        Thunk { f: self.f.clone() }
    }
}

// Thunks compare by identity.
impl<T> PartialEq for Thunk<T> {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.f, &other.f)
    }
}

impl<T> fmt::Debug for Thunk<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("<thunk>")
    }
}

/// Synchronizes exactly as `ev`; `f` runs on the result only when the
/// returned thunk is forced, after the synchronization has committed.
pub fn thunk_wrap<A, B, F>(ev: Event<A>, f: F) -> Event<Thunk<B>>
where
    A: Payload,
    B: Send + Sync + 'static,
    F: Fn(A) -> B + Send + Sync + 'static,
{
    let f = Arc::new(f);
    then_evt(ev, move |x: A| {
        let f = f.clone();
        always_evt(Thunk::new(move || f(x.clone())))
    })
}

/// [`thunk_wrap`] for post-processing that can fail, typically because it
/// synchronizes again.
pub fn try_thunk_wrap<A, B, F>(ev: Event<A>, f: F) -> Event<Thunk<B>>
where
    A: Payload,
    B: Send + Sync + 'static,
    F: Fn(A) -> Result<B, SyncError> + Send + Sync + 'static,
{
    let f = Arc::new(f);
    then_evt(ev, move |x: A| {
        let f = f.clone();
        always_evt(Thunk::fallible(move || f(x.clone())))
    })
}

/// `sync(ev)` followed by forcing the returned thunk.
pub fn sync_thunked<T: Send + Sync + 'static>(ev: Event<Thunk<T>>) -> Result<T, SyncError> {
    sync(ev)?.force()
}

/// Post-composes `g` onto a thunked event without nesting thunks.
///
/// The inner thunk is forced inside the continuation, i.e. during
/// synchronization; only `g` is deferred to force time. A failure of the
/// inner thunk aborts the synchronization.
pub fn rewrap<A, B, G>(ev: Event<Thunk<A>>, g: G) -> Event<Thunk<B>>
where
    A: Clone + Send + Sync + 'static,
    B: Send + Sync + 'static,
    G: Fn(A) -> B + Send + Sync + 'static,
{
    let g = Arc::new(g);
    then_evt(ev, move |inner: Thunk<A>| -> Result<Event<Thunk<B>>, SyncError> {
        let x = inner.force()?;
        let g = g.clone();
        Ok(always_evt(Thunk::new(move || g(x.clone()))))
    })
}

/// Behaves as `ev`, unless `after` elapses first, in which case the
/// synchronization fails with [`SyncError::TimedOut`].
///
/// Built from a choice whose second branch waits out the delay and then
/// raises, so the raise aborts the whole synchronization, and a commit of
/// `ev` discards the waiting branch.
pub fn timeout_evt<T: Payload>(ev: Event<T>, after: Duration) -> Event<T> {
    let expire = then_evt(always_evt(()), move |()| {
        then_evt(delay_evt(after), move |()| -> Result<Event<T>, SyncError> {
            Err(SyncError::TimedOut(after))
        })
    });
    choose_evt(ev, expire)
}

/// Receives on `c`, but commits only with a value satisfying `pred`.
pub fn guarded_recv_evt<T, P>(c: Channel<T>, pred: P) -> Event<T>
where
    T: Payload,
    P: Fn(&T) -> bool + Send + Sync + 'static,
{
    then_evt(
        recv_evt(c),
        move |v: T| {
            if pred(&v) {
                always_evt(v)
            } else {
                never_evt()
            }
        },
    )
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum RendezvousRole {
    Leader,
    /// Index into the channel list.
    Member(usize),
}

/// One party's event in an n-way rendezvous over a star of channels.
///
/// The leader sends on every channel within one transaction; member `i`
/// receives on `chans[i]`. A commit needs all `chans.len() + 1` parties.
///
/// # Panics
///
/// If `chans` is empty or a member index is out of range.
pub fn n_way_rendezvous_evt(chans: &[Channel<()>], role: RendezvousRole) -> Event<()> {
    assert!(!chans.is_empty(), "a rendezvous needs at least two parties");
    match role {
        RendezvousRole::Member(i) => {
            assert!(i < chans.len(), "member index {i} out of range");
            recv_evt(chans[i])
        }
        RendezvousRole::Leader => chans.iter().rev().fold(always_evt(()), |rest, c| {
            then_evt(send_evt(*c, ()), move |()| rest.clone())
        }),
    }
}

type LoopStep<A, B> = Arc<dyn Fn((A, B)) -> (Event<A>, B) + Send + Sync>;

/// Synchronizes on `ev` and then either returns `(a, b)` or continues with
/// `f((a, b))`, all within the same transaction. The choice is left to the
/// engine, so one synchronization can run any number of iterations.
pub fn evt_loop<A, B, F>(ev: Event<A>, b: B, f: F) -> Event<(A, B)>
where
    A: Payload,
    B: Payload,
    F: Fn((A, B)) -> (Event<A>, B) + Send + Sync + 'static,
{
    evt_loop_with(ev, b, Arc::new(f))
}

fn evt_loop_with<A: Payload, B: Payload>(ev: Event<A>, b: B, f: LoopStep<A, B>) -> Event<(A, B)> {
    then_evt(ev, move |a: A| {
        let (next_ev, next_b) = f((a.clone(), b.clone()));
        choose_evt(always_evt((a, b.clone())), evt_loop_with(next_ev, next_b, f.clone()))
    })
}

/// Loops forever, synchronizing on `evt_loop(ev, b, f)` and recurring with
/// `f` applied to the result. `b` is the loop-carried state.
///
/// Returns only with the error of a failed synchronization.
pub fn server_loop<A, B, F>(ev: Event<A>, b: B, f: F) -> Result<Infallible, SyncError>
where
    A: Payload,
    B: Payload,
    F: Fn((A, B)) -> (Event<A>, B) + Send + Sync + 'static,
{
    let f: LoopStep<A, B> = Arc::new(f);
    let (mut ev, mut b) = (ev, b);
    loop {
        let (a, b2) = sync(evt_loop_with(ev, b, f.clone()))?;
        (ev, b) = f((a, b2));
    }
}
