//! Per-thread host selection.
//!
//! `sync`, `spawn`, `sleep` and `new_channel` are free functions so that the
//! same protocol code runs on real threads and inside the deterministic
//! harness. Each thread records which host it belongs to; threads with no
//! recorded host use [`Runtime::global`].

use std::cell::RefCell;
use std::fmt::Debug;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use crate::error::SyncError;
use crate::event::{ChannelId, Event};
use crate::harness::sim::TaskCtx;
use crate::runtime::Runtime;
use crate::value::{Payload, Value};

#[derive(Clone)]
pub(crate) enum Host {
    Runtime(Runtime),
    Sim(TaskCtx),
}

thread_local! {
    static HOST: RefCell<Option<Host>> = const { RefCell::new(None) };
}

static NEXT_CHANNEL: AtomicU64 = AtomicU64::new(1);

pub(crate) fn set_host(h: Option<Host>) -> Option<Host> {
    HOST.with(|c| std::mem::replace(&mut *c.borrow_mut(), h))
}

fn current() -> Host {
    HOST.with(|c| c.borrow().clone())
        .unwrap_or_else(|| Host::Runtime(Runtime::global().clone()))
}

pub(crate) fn next_channel_id() -> ChannelId {
    match HOST.with(|c| c.borrow().clone()) {
        Some(Host::Sim(ctx)) => ctx.next_channel_id(),
        _ => ChannelId(NEXT_CHANNEL.fetch_add(1, Ordering::Relaxed)),
    }
}

pub(crate) fn sync_value(ev: &crate::event::AnyEvent) -> Result<Value, SyncError> {
    match current() {
        Host::Runtime(rt) => rt.sync_any(ev),
        Host::Sim(ctx) => ctx.sync(ev),
    }
}

/// Performs `e`, blocking until a transaction including it commits.
///
/// Returns the committed branch's value, or the exception that aborted the
/// synchronization. Nothing a failed or never-committed synchronization did
/// is visible to any other thread.
pub fn sync<T: Payload>(e: Event<T>) -> Result<T, SyncError> {
    let v = sync_value(&e.erase())?;
    Ok(v.downcast::<T>().expect("committed value has the event's result type"))
}

/// Starts a thread (a logical task inside the harness) running `f`.
pub fn spawn<F, R>(f: F)
where
    F: FnOnce() -> Result<R, SyncError> + Send + 'static,
    R: Debug + Send + 'static,
{
    spawn_inner(None, f)
}

/// Like [`spawn`]; the name labels the task in harness outcomes.
pub fn spawn_named<F, R>(name: impl Into<String>, f: F)
where
    F: FnOnce() -> Result<R, SyncError> + Send + 'static,
    R: Debug + Send + 'static,
{
    spawn_inner(Some(name.into()), f)
}

fn spawn_inner<F, R>(name: Option<String>, f: F)
where
    F: FnOnce() -> Result<R, SyncError> + Send + 'static,
    R: Debug + Send + 'static,
{
    match current() {
        Host::Sim(ctx) => ctx.spawn_thread(name, f),
        host @ Host::Runtime(_) => {
            let mut b = std::thread::Builder::new();
            if let Some(n) = name {
                b = b.name(n);
            }
            b.spawn(move || {
                set_host(Some(host));
                let _ = f();
            })
            .expect("failed to spawn thread");
        }
    }
}

/// Suspends the caller for `d` (virtual time inside the harness).
pub fn sleep(d: Duration) {
    match current() {
        Host::Runtime(_) => std::thread::sleep(d),
        Host::Sim(ctx) => ctx.sleep(d),
    }
}

/// Time elapsed since the host started.
pub fn now() -> Duration {
    match current() {
        Host::Runtime(rt) => rt.now(),
        Host::Sim(ctx) => ctx.now(),
    }
}

pub(crate) fn current_sim() -> Option<TaskCtx> {
    match HOST.with(|c| c.borrow().clone()) {
        Some(Host::Sim(ctx)) => Some(ctx),
        _ => None,
    }
}
