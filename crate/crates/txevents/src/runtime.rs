//! Real-thread host for the engine.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Condvar, Mutex, OnceLock, Weak};
use std::time::{Duration, Instant};

use crate::context::{self, Host};
use crate::engine::{Coordinator, Effects, EngineConfig, SyncId, TimerKey, TraceRecord, TraceSink};
use crate::error::SyncError;
use crate::event::{AnyEvent, Event};
use crate::value::{Payload, Value};

/// A synchronization engine shared by any number of OS threads.
///
/// Callers of [`Runtime::sync`] register their event with the coordinator,
/// run search rounds under its lock, and then wait for their own result.
/// Armed delays are fired by a helper thread started on first use.
#[derive(Clone)]
pub struct Runtime {
    inner: Arc<Inner>,
}

struct Inner {
    state: Mutex<State>,
    cv: Condvar,
    epoch: Instant,
}

struct State {
    coord: Coordinator,
    results: HashMap<SyncId, Result<Value, SyncError>>,
    timers: BTreeMap<(Duration, TimerKey), ()>,
    deadlines: HashMap<TimerKey, Duration>,
    timer_thread: bool,
    shutdown: bool,
}

impl State {
    fn apply(&mut self, fx: Effects) {
        for (key, deadline) in fx.timers_set {
            self.timers.insert((deadline, key), ());
            self.deadlines.insert(key, deadline);
        }
        for key in fx.timers_cancelled {
            if let Some(d) = self.deadlines.remove(&key) {
                self.timers.remove(&(d, key));
            }
        }
        for (id, r) in fx.resolved {
            self.results.insert(id, r);
        }
    }
}

impl Runtime {
    pub fn new(cfg: EngineConfig) -> Self {
        Runtime::build(Coordinator::with_trace(cfg, false, None))
    }

    /// A runtime that streams every trace record to `sink`.
    pub fn with_trace_sink(cfg: EngineConfig, sink: Arc<dyn TraceSink>) -> Self {
        Runtime::build(Coordinator::with_trace(cfg, false, Some(sink)))
    }

    /// A runtime that keeps its trace in memory; see [`Runtime::trace`].
    pub fn with_trace(cfg: EngineConfig) -> Self {
        Runtime::build(Coordinator::with_trace(cfg, true, None))
    }

    fn build(coord: Coordinator) -> Self {
        Runtime {
            inner: Arc::new(Inner {
                state: Mutex::new(State {
                    coord,
                    results: HashMap::new(),
                    timers: BTreeMap::new(),
                    deadlines: HashMap::new(),
                    timer_thread: false,
                    shutdown: false,
                }),
                cv: Condvar::new(),
                epoch: Instant::now(),
            }),
        }
    }

    /// The process-wide runtime used by threads not bound to another host.
    pub fn global() -> &'static Runtime {
        static GLOBAL: OnceLock<Runtime> = OnceLock::new();
        GLOBAL.get_or_init(|| Runtime::new(EngineConfig::default()))
    }

    /// Runs `f` with this runtime as the current thread's host, so the free
    /// functions ([`sync`](crate::sync), [`spawn`](crate::spawn), ...) and
    /// threads spawned from `f` use it.
    pub fn enter<R>(&self, f: impl FnOnce() -> R) -> R {
        let prev = context::set_host(Some(Host::Runtime(self.clone())));
        struct Restore(Option<Host>);
        impl Drop for Restore {
            fn drop(&mut self) {
                context::set_host(self.0.take());
            }
        }
        let _restore = Restore(prev);
        f()
    }

    pub fn now(&self) -> Duration {
        self.inner.epoch.elapsed()
    }

    pub fn sync<T: Payload>(&self, e: Event<T>) -> Result<T, SyncError> {
        let v = self.sync_any(&e.erase())?;
        Ok(v.downcast::<T>().expect("committed value has the event's result type"))
    }

    pub(crate) fn sync_any(&self, ev: &AnyEvent) -> Result<Value, SyncError> {
        let mut st = self.inner.state.lock().unwrap();
        if st.shutdown {
            return Err(SyncError::Shutdown);
        }
        let now = self.now();
        let (id, fx) = st.coord.register(ev, now);
        let armed = !fx.timers_set.is_empty();
        st.apply(fx);
        let fx = st.coord.settle(now);
        st.apply(fx);
        if armed {
            self.ensure_timer_thread(&mut st);
        }
        self.inner.cv.notify_all();
        loop {
            if let Some(r) = st.results.remove(&id) {
                return r;
            }
            st = self.inner.cv.wait(st).unwrap();
        }
    }

    fn ensure_timer_thread(&self, st: &mut State) {
        if st.timer_thread {
            return;
        }
        st.timer_thread = true;
        let weak = Arc::downgrade(&self.inner);
        std::thread::Builder::new()
            .name("txevents-timer".into())
            .spawn(move || timer_loop(weak))
            .expect("failed to spawn timer thread");
    }

    /// Resolves every pending synchronization with [`SyncError::Shutdown`];
    /// later calls to `sync` fail immediately.
    pub fn shutdown(&self) {
        let mut st = self.inner.state.lock().unwrap();
        st.shutdown = true;
        let fx = st.coord.shutdown();
        st.apply(fx);
        self.inner.cv.notify_all();
    }

    /// Records kept so far (empty unless built with [`Runtime::with_trace`]).
    pub fn trace(&self) -> Vec<TraceRecord> {
        self.inner.state.lock().unwrap().coord.trace().to_vec()
    }
}

fn timer_loop(weak: Weak<Inner>) {
    const POLL: Duration = Duration::from_millis(50);
    loop {
        let Some(inner) = weak.upgrade() else { return };
        let mut st = inner.state.lock().unwrap();
        if st.shutdown {
            return;
        }
        let now = inner.epoch.elapsed();
        let due: Vec<TimerKey> = st
            .timers
            .keys()
            .take_while(|(d, _)| *d <= now)
            .map(|(_, k)| *k)
            .collect();
        if !due.is_empty() {
            for key in due {
                if let Some(d) = st.deadlines.remove(&key) {
                    st.timers.remove(&(d, key));
                }
                let fx = st.coord.fire_timer(key, now);
                st.apply(fx);
            }
            let fx = st.coord.settle(now);
            st.apply(fx);
            inner.cv.notify_all();
            continue;
        }
        let wait = st
            .timers
            .keys()
            .next()
            .map_or(POLL, |(d, _)| d.saturating_sub(now).min(POLL));
        let (st, _) = inner.cv.wait_timeout(st, wait).unwrap();
        drop(st);
    }
}
