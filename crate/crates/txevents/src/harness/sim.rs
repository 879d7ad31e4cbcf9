//! Cooperative scheduler for harness runs.
//!
//! Each logical task is an OS thread, but only the holder of the baton runs;
//! everything else, including the embedded engine, waits on one mutex. Script
//! tasks (fixed lists of events) run inline on the scheduler thread.

use std::collections::{HashMap, VecDeque};
use std::fmt::Debug;
use std::panic::{self, AssertUnwindSafe};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::clock::{TimerHandle, VirtualClock};
use super::oracle::{Move, OracleBackend};
use super::{CommitSummary, HarnessError, OutcomeClass, RunReport, RunStatus, SimConfig, TaskOutcome, TaskReport};
use crate::context::{self, Host};
use crate::engine::{Coordinator, Effects, SyncId, TimerKey};
use crate::error::{SyncError, Teardown};
use crate::event::{AnyEvent, ChannelId};
use crate::value::Value;

pub(crate) enum Backend {
    Engine(Box<Coordinator>),
    Oracle(OracleBackend),
}

impl Backend {
    fn register(&mut self, ev: &AnyEvent, now: Duration) -> (SyncId, Effects) {
        match self {
            Backend::Engine(c) => c.register(ev, now),
            Backend::Oracle(o) => o.register(ev, now),
        }
    }

    fn fire_timer(&mut self, key: TimerKey, now: Duration) -> Effects {
        match self {
            Backend::Engine(c) => c.fire_timer(key, now),
            Backend::Oracle(o) => o.fire_timer(key, now),
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum TimerTarget {
    Engine(TimerKey),
    Wake(usize),
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum TaskState {
    Runnable,
    Blocked,
    Finished,
}

enum Body {
    Thread,
    Script {
        events: VecDeque<AnyEvent>,
        results: Vec<String>,
    },
}

struct Task {
    name: String,
    state: TaskState,
    wake: Option<Result<Value, SyncError>>,
    body: Body,
    syncs: usize,
    outcome: Option<TaskOutcome>,
    finished_at: Option<Duration>,
}

struct Sched {
    backend: Backend,
    clock: VirtualClock<TimerTarget>,
    engine_timers: HashMap<TimerKey, TimerHandle>,
    tasks: Vec<Task>,
    by_sync: HashMap<SyncId, usize>,
    running: Option<usize>,
    teardown: bool,
    commits: Vec<CommitSummary>,
    max_threads: Option<usize>,
    error: Option<HarnessError>,
}

struct Shared {
    sched: Mutex<Sched>,
    cv: Condvar,
    next_channel: AtomicU64,
    handles: Mutex<Vec<JoinHandle<()>>>,
}

/// A task's view of the simulator; installed as the thread's host.
#[derive(Clone)]
pub(crate) struct TaskCtx {
    shared: Arc<Shared>,
    task: usize,
}

const SCHEDULER: usize = usize::MAX;

impl Sched {
    fn apply(&mut self, fx: Effects) {
        for (key, deadline) in fx.timers_set {
            let h = self.clock.schedule(deadline, TimerTarget::Engine(key));
            self.engine_timers.insert(key, h);
        }
        for key in fx.timers_cancelled {
            if let Some(h) = self.engine_timers.remove(&key) {
                self.clock.cancel(h);
            }
        }
        for txn in fx.commits {
            let participants: Vec<SyncId> = txn.participants.iter().map(|p| p.sync).collect();
            self.commits.push(CommitSummary {
                txn: txn.id,
                tasks: self.task_names(&participants),
                participants,
                pairs: txn.matching.iter().map(|m| (m.channel, m.value.render())).collect(),
            });
        }
        for (sync, r) in fx.resolved {
            if let Some(t) = self.by_sync.remove(&sync) {
                self.tasks[t].wake = Some(r);
                self.tasks[t].state = TaskState::Runnable;
            }
        }
    }

    fn task_names(&self, syncs: &[SyncId]) -> Vec<String> {
        syncs
            .iter()
            .filter_map(|s| self.by_sync.get(s).map(|&t| self.tasks[t].name.clone()))
            .collect()
    }

    fn register(&mut self, task: usize, ev: &AnyEvent) {
        let now = self.clock.now();
        let (id, fx) = self.backend.register(ev, now);
        self.by_sync.insert(id, task);
        let t = &mut self.tasks[task];
        t.syncs += 1;
        t.state = TaskState::Blocked;
        if t.syncs == 1 {
            if let Some(max) = self.max_threads {
                let active = self.tasks.iter().filter(|t| t.syncs > 0).count();
                if active > max && self.error.is_none() {
                    self.error = Some(HarnessError::BoundsExceeded(format!(
                        "{active} synchronizing threads, oracle bound is {max}"
                    )));
                }
            }
        }
        self.apply(fx);
    }

    fn finish(&mut self, task: usize, outcome: TaskOutcome) {
        let now = self.clock.now();
        let t = &mut self.tasks[task];
        t.state = TaskState::Finished;
        t.outcome = Some(outcome);
        t.finished_at = Some(now);
    }

    fn add_task(&mut self, name: Option<String>, body: Body) -> usize {
        let id = self.tasks.len();
        self.tasks.push(Task {
            name: name.unwrap_or_else(|| format!("task-{id}")),
            state: TaskState::Runnable,
            wake: None,
            body,
            syncs: 0,
            outcome: None,
            finished_at: None,
        });
        id
    }

    /// Runs one step of a script task on the scheduler thread.
    fn step_script(&mut self, task: usize) {
        let wake = self.tasks[task].wake.take();
        let Body::Script { events, results } = &mut self.tasks[task].body else {
            unreachable!()
        };
        match wake {
            Some(Ok(v)) => results.push(v.render()),
            Some(Err(e)) => {
                self.finish(task, TaskOutcome::Exception(e.kind()));
                return;
            }
            None => {}
        }
        match events.pop_front() {
            Some(ev) => self.register(task, &ev),
            None => {
                let out = format!("[{}]", results.join(", "));
                self.finish(task, TaskOutcome::Value(out));
            }
        }
    }
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, Sched> {
        self.sched.lock().unwrap_or_else(|p| p.into_inner())
    }
}

impl TaskCtx {
    pub(crate) fn next_channel_id(&self) -> ChannelId {
        ChannelId(self.shared.next_channel.fetch_add(1, Ordering::Relaxed))
    }

    /// Blocks until this task holds the baton; unwinds on teardown.
    fn wait_turn<'a>(&'a self, mut st: MutexGuard<'a, Sched>) -> MutexGuard<'a, Sched> {
        while st.running != Some(self.task) && !st.teardown {
            st = self.shared.cv.wait(st).unwrap_or_else(|p| p.into_inner());
        }
        if st.teardown {
            drop(st);
            panic::resume_unwind(Box::new(Teardown));
        }
        st
    }

    fn yield_turn<'a>(&'a self, mut st: MutexGuard<'a, Sched>) -> MutexGuard<'a, Sched> {
        st.running = None;
        self.shared.cv.notify_all();
        self.wait_turn(st)
    }

    fn check_caller(&self, st: &Sched) {
        assert!(
            self.task != SCHEDULER && st.running == Some(self.task),
            "blocking harness operation called outside a task (for example from a continuation)"
        );
    }

    pub(crate) fn sync(&self, ev: &AnyEvent) -> Result<Value, SyncError> {
        let mut st = self.shared.lock();
        self.check_caller(&st);
        st.register(self.task, ev);
        let mut st = self.yield_turn(st);
        st.tasks[self.task].wake.take().expect("a resumed task has its result")
    }

    pub(crate) fn sleep(&self, d: Duration) {
        let mut st = self.shared.lock();
        self.check_caller(&st);
        let deadline = st.clock.now() + d;
        st.clock.schedule(deadline, TimerTarget::Wake(self.task));
        st.tasks[self.task].state = TaskState::Blocked;
        let mut st = self.yield_turn(st);
        st.tasks[self.task].wake = None;
    }

    pub(crate) fn now(&self) -> Duration {
        self.shared.lock().clock.now()
    }

    pub(crate) fn spawn_thread<F, R>(&self, name: Option<String>, f: F)
    where
        F: FnOnce() -> Result<R, SyncError> + Send + 'static,
        R: Debug + Send + 'static,
    {
        let id = self.shared.lock().add_task(name, Body::Thread);
        start_thread(&self.shared, id, f);
    }

    pub(crate) fn spawn_script(&self, name: Option<String>, events: Vec<AnyEvent>) {
        self.shared.lock().add_task(
            name,
            Body::Script {
                events: events.into(),
                results: Vec::new(),
            },
        );
    }
}

fn start_thread<F, R>(shared: &Arc<Shared>, id: usize, f: F)
where
    F: FnOnce() -> Result<R, SyncError> + Send + 'static,
    R: Debug + Send + 'static,
{
    let ctx = TaskCtx {
        shared: shared.clone(),
        task: id,
    };
    let handle = std::thread::Builder::new()
        .name(format!("sim-task-{id}"))
        .spawn(move || {
            context::set_host(Some(Host::Sim(ctx.clone())));
            let res = panic::catch_unwind(AssertUnwindSafe(|| {
                drop(ctx.wait_turn(ctx.shared.lock()));
                f()
            }));
            let outcome = match res {
                Ok(Ok(v)) => TaskOutcome::Value(format!("{v:?}")),
                Ok(Err(e)) => TaskOutcome::Exception(e.kind()),
                Err(p) if p.is::<Teardown>() => return,
                Err(p) => {
                    let msg = p
                        .downcast_ref::<&str>()
                        .map(|s| s.to_string())
                        .or_else(|| p.downcast_ref::<String>().cloned())
                        .unwrap_or_default();
                    TaskOutcome::Exception(format!("Panic({msg})"))
                }
            };
            let mut st = ctx.shared.lock();
            st.finish(ctx.task, outcome);
            st.running = None;
            ctx.shared.cv.notify_all();
        })
        .expect("failed to spawn harness task");
    shared.handles.lock().unwrap().push(handle);
}

/// How the scheduler resolves its choices.
pub(crate) enum Policy<'a> {
    /// Seeded uniform choice among runnable tasks and an engine round.
    Engine(Box<ChaCha8Rng>),
    /// Tasks run eagerly in id order; `choose(n)` picks one of `n` oracle
    /// moves.
    Oracle(&'a mut dyn FnMut(usize) -> usize),
}

pub(crate) fn run(
    setup: Arc<dyn Fn() + Send + Sync>,
    cfg: &SimConfig,
    backend: Backend,
    mut policy: Policy<'_>,
) -> Result<RunReport, HarnessError> {
    let oracle_mode = matches!(policy, Policy::Oracle(_));
    let shared = Arc::new(Shared {
        sched: Mutex::new(Sched {
            backend,
            clock: VirtualClock::new(),
            engine_timers: HashMap::new(),
            tasks: Vec::new(),
            by_sync: HashMap::new(),
            running: None,
            teardown: false,
            commits: Vec::new(),
            max_threads: oracle_mode.then_some(cfg.oracle.max_threads),
            error: None,
        }),
        cv: Condvar::new(),
        next_channel: AtomicU64::new(1),
        handles: Mutex::new(Vec::new()),
    });
    let me = TaskCtx {
        shared: shared.clone(),
        task: SCHEDULER,
    };
    let prev_host = context::set_host(Some(Host::Sim(me)));

    let id = shared.lock().add_task(Some("setup".into()), Body::Thread);
    start_thread(&shared, id, move || {
        setup();
        Ok::<(), SyncError>(())
    });

    let wall_start = Instant::now();
    let mut steps = 0u64;
    let mut st = shared.lock();
    let status = loop {
        if let Some(e) = st.error.take() {
            st.error = Some(e);
            break RunStatus::Quiescent;
        }
        if steps >= cfg.max_steps {
            break RunStatus::StepBudgetExhausted;
        }
        let runnable: Vec<usize> = st
            .tasks
            .iter()
            .enumerate()
            .filter(|(_, t)| t.state == TaskState::Runnable)
            .map(|(i, _)| i)
            .collect();

        // None means an engine round.
        let action: Option<Option<usize>> = match &mut policy {
            Policy::Engine(rng) => {
                let dirty = matches!(&st.backend, Backend::Engine(c) if c.is_dirty());
                let n = runnable.len() + usize::from(dirty);
                if n == 0 {
                    None
                } else {
                    let i = rng.gen_range(0..n);
                    Some(runnable.get(i).copied())
                }
            }
            Policy::Oracle(choose) => {
                if let Some(t) = runnable.first() {
                    Some(Some(*t))
                } else {
                    let Backend::Oracle(o) = &mut st.backend else {
                        unreachable!()
                    };
                    let moves = match o.moves() {
                        Ok(m) => m,
                        Err(e) => {
                            st.error = Some(e);
                            continue;
                        }
                    };
                    if moves.is_empty() {
                        None
                    } else {
                        let i = choose(moves.len());
                        let mv: Move = moves.into_iter().nth(i).expect("choice in range");
                        let (fx, mut commit) = o.apply(mv);
                        if let Some(c) = &mut commit {
                            c.tasks = st.task_names(&c.participants);
                        }
                        st.apply(fx);
                        st.commits.extend(commit);
                        steps += 1;
                        continue;
                    }
                }
            }
        };
        steps += 1;
        match action {
            Some(Some(t)) => {
                if matches!(st.tasks[t].body, Body::Script { .. }) {
                    st.step_script(t);
                } else {
                    st.running = Some(t);
                    shared.cv.notify_all();
                    while st.running.is_some() {
                        st = shared.cv.wait(st).unwrap_or_else(|p| p.into_inner());
                    }
                }
            }
            Some(None) => {
                let now = st.clock.now();
                let Backend::Engine(c) = &mut st.backend else {
                    unreachable!()
                };
                let fx = c.step(now);
                st.apply(fx);
            }
            None => {
                let Some(deadline) = st.clock.next_deadline() else {
                    break RunStatus::Quiescent;
                };
                if !cfg.virtual_time {
                    let wait = deadline.saturating_sub(wall_start.elapsed());
                    drop(st);
                    std::thread::sleep(wait);
                    st = shared.lock();
                }
                let fired = st.clock.advance_to(deadline);
                let now = st.clock.now();
                for target in fired {
                    match target {
                        TimerTarget::Engine(key) => {
                            st.engine_timers.remove(&key);
                            let fx = st.backend.fire_timer(key, now);
                            st.apply(fx);
                        }
                        TimerTarget::Wake(t) => {
                            st.tasks[t].wake = Some(Ok(Value::unit()));
                            st.tasks[t].state = TaskState::Runnable;
                        }
                    }
                }
            }
        }
    };

    st.teardown = true;
    shared.cv.notify_all();
    let error = st.error.take();
    let final_time = st.clock.now();
    let tasks: Vec<TaskReport> = st
        .tasks
        .iter()
        .map(|t| TaskReport {
            name: t.name.clone(),
            outcome: t.outcome.clone().unwrap_or(TaskOutcome::Pending),
            finished_at: t.finished_at,
            syncs: t.syncs,
        })
        .collect();
    let commits = std::mem::take(&mut st.commits);
    let (trace, pending_syncs) = match &st.backend {
        Backend::Engine(c) => (c.trace().to_vec(), c.pending().count()),
        Backend::Oracle(o) => (Vec::new(), o.pending_count()),
    };
    drop(st);
    let handles = std::mem::take(&mut *shared.handles.lock().unwrap());
    for h in handles {
        let _ = h.join();
    }
    context::set_host(prev_host);
    if let Some(e) = error {
        return Err(e);
    }
    Ok(RunReport {
        outcome: OutcomeClass::from_parts(&tasks, &commits),
        trace,
        status,
        steps,
        final_time,
        tasks,
        commits,
        pending_syncs,
    })
}
