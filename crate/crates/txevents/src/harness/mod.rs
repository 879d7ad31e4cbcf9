//! Deterministic execution of small concurrent programs, plus a brute-force
//! reference for what they may do.
//!
//! A [`Scenario`] is a setup function that creates channels and spawns
//! tasks with the crate's ordinary [`spawn`](crate::spawn) and
//! [`sync`](crate::sync). [`run_scenario`] executes it under a seeded
//! cooperative scheduler with a virtual clock and the real engine;
//! [`explore_outcomes`] enumerates every outcome the reference semantics
//! allows.

mod clock;
pub mod gen;
mod oracle;
pub mod scenarios;
pub(crate) mod sim;

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use clock::{TimerHandle, VirtualClock};

use crate::context;
use crate::engine::{Coordinator, EngineConfig, SyncId, TraceRecord};
use crate::event::{new_channel, AnyEvent, Channel, ChannelId, Event};
use crate::value::Payload;
use oracle::OracleBackend;
use sim::{Backend, Policy};

/// Largest configurations the oracle accepts.
pub const MAX_ORACLE_THREADS: usize = 4;
pub const MAX_ORACLE_COMMS: usize = 6;
pub const MAX_ORACLE_UNROLL: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OracleBounds {
    /// Tasks that synchronize at least once.
    pub max_threads: usize,
    /// Matched pairs in one transaction.
    pub max_comms: usize,
    /// Communications by one synchronization within one transaction.
    pub max_unroll: usize,
}

impl Default for OracleBounds {
    fn default() -> Self {
        OracleBounds {
            max_threads: MAX_ORACLE_THREADS,
            max_comms: MAX_ORACLE_COMMS,
            max_unroll: MAX_ORACLE_UNROLL,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimConfig {
    pub seed: u64,
    /// When off, timers still fire in virtual-time order, but the scheduler
    /// first waits for the deadline on the wall clock.
    pub virtual_time: bool,
    pub max_steps: u64,
    pub engine: EngineConfig,
    pub oracle: OracleBounds,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            virtual_time: true,
            max_steps: 10_000,
            engine: EngineConfig::default(),
            oracle: OracleBounds::default(),
        }
    }
}

impl SimConfig {
    pub fn with_seed(seed: u64) -> Self {
        SimConfig {
            seed,
            ..SimConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.max_steps == 0 {
            return Err(HarnessError::InvalidConfig("max_steps must be at least 1".into()));
        }
        self.engine
            .validate()
            .map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
        for (name, v, max) in [
            ("max_threads", self.oracle.max_threads, MAX_ORACLE_THREADS),
            ("max_comms", self.oracle.max_comms, MAX_ORACLE_COMMS),
            ("max_unroll", self.oracle.max_unroll, MAX_ORACLE_UNROLL),
        ] {
            if v == 0 || v > max {
                return Err(HarnessError::InvalidConfig(format!(
                    "{name} must be in 1..={max}, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("outside oracle bounds: {0}")]
    BoundsExceeded(String),
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum TaskOutcome {
    /// Debug rendering of the task's return value.
    Value(String),
    Pending,
    /// [`SyncError::kind`](crate::SyncError::kind) of the error it returned.
    Exception(String),
}

impl fmt::Display for TaskOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskOutcome::Value(v) => f.write_str(v),
            TaskOutcome::Pending => f.write_str("pending"),
            TaskOutcome::Exception(e) => write!(f, "exception {e}"),
        }
    }
}

/// What a run did, up to scheduling details: each task's result, how many
/// of its synchronizations completed, and the multiset of committed
/// `(channel, value)` pairs.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct OutcomeClass {
    /// Sorted by task name.
    pub results: Vec<(String, TaskOutcome)>,
    /// Completed synchronizations per task, sorted by task name.
    pub completed: Vec<(String, usize)>,
    /// Sorted.
    pub pairs: Vec<(ChannelId, String)>,
}

impl OutcomeClass {
    fn from_parts(tasks: &[TaskReport], commits: &[CommitSummary]) -> Self {
        let mut results: Vec<(String, TaskOutcome)> =
            tasks.iter().map(|t| (t.name.clone(), t.outcome.clone())).collect();
        results.sort();
        let mut completed: Vec<(String, usize)> = tasks
            .iter()
            .map(|t| {
                (
                    t.name.clone(),
                    t.syncs - usize::from(t.outcome == TaskOutcome::Pending && t.syncs > 0),
                )
            })
            .collect();
        completed.sort();
        let mut pairs: Vec<(ChannelId, String)> = commits.iter().flat_map(|c| c.pairs.iter().cloned()).collect();
        pairs.sort();
        OutcomeClass {
            results,
            completed,
            pairs,
        }
    }

    pub fn result(&self, task: &str) -> Option<&TaskOutcome> {
        self.results.iter().find(|(n, _)| n == task).map(|(_, o)| o)
    }
}

impl fmt::Display for OutcomeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rs: Vec<String> = self
            .results
            .iter()
            .zip(&self.completed)
            .map(|((n, o), (_, k))| format!("{n}={o} [{k} done]"))
            .collect();
        let ps: Vec<String> = self.pairs.iter().map(|(c, v)| format!("{c}:{v}")).collect();
        write!(f, "{{{}}} pairs [{}]", rs.join(", "), ps.join(", "))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskReport {
    pub name: String,
    pub outcome: TaskOutcome,
    pub finished_at: Option<Duration>,
    pub syncs: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CommitSummary {
    pub txn: u64,
    pub participants: Vec<SyncId>,
    /// Names of the tasks whose synchronizations committed, in participant order.
    pub tasks: Vec<String>,
    pub pairs: Vec<(ChannelId, String)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    /// No runnable task, no engine work, no timer left.
    Quiescent,
    StepBudgetExhausted,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub outcome: OutcomeClass,
    /// Engine trace; empty for oracle runs.
    pub trace: Vec<TraceRecord>,
    pub status: RunStatus,
    pub steps: u64,
    pub final_time: Duration,
    pub tasks: Vec<TaskReport>,
    pub commits: Vec<CommitSummary>,
    /// Synchronizations still pending at the end.
    pub pending_syncs: usize,
}

impl RunReport {
    pub fn task(&self, name: &str) -> Option<&TaskReport> {
        self.tasks.iter().find(|t| t.name == name)
    }
}

type Setup = Arc<dyn Fn() + Send + Sync>;

#[derive(Clone)]
pub struct Scenario {
    pub name: String,
    /// Runs as the task named `setup`; must be deterministic.
    pub setup: Setup,
    pub expected: Option<BTreeSet<OutcomeClass>>,
}

impl Scenario {
    pub fn new(name: impl Into<String>, setup: impl Fn() + Send + Sync + 'static) -> Self {
        Scenario {
            name: name.into(),
            setup: Arc::new(setup),
            expected: None,
        }
    }
}

impl fmt::Debug for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Scenario")
            .field("name", &self.name)
            .finish_non_exhaustive()
    }
}

/// Runs `s` once under the engine with the scheduler seeded by `cfg.seed`.
pub fn run_scenario(s: &Scenario, cfg: &SimConfig) -> Result<RunReport, HarnessError> {
    cfg.validate()?;
    let engine = EngineConfig {
        seed: cfg.seed,
        ..cfg.engine.clone()
    };
    let backend = Backend::Engine(Box::new(Coordinator::new(engine)));
    let rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5c4e_d01e);
    sim::run(s.setup.clone(), cfg, backend, Policy::Engine(Box::new(rng)))
}

/// Replays allowed per exploration.
const MAX_REPLAYS: usize = 20_000;

/// Every outcome class the reference semantics can reach for `s`.
///
/// Tasks run eagerly; at each point where all are blocked, every available
/// commit and abort is tried in turn. Timers fire only when nothing else can
/// happen.
pub fn explore_outcomes(s: &Scenario, cfg: &SimConfig) -> Result<BTreeSet<OutcomeClass>, HarnessError> {
    cfg.validate()?;
    let mut out = BTreeSet::new();
    let mut todo: Vec<Vec<usize>> = vec![Vec::new()];
    let mut replays = 0;
    while let Some(prefix) = todo.pop() {
        replays += 1;
        if replays > MAX_REPLAYS {
            return Err(HarnessError::BoundsExceeded("too many interleavings".into()));
        }
        let mut taken: Vec<(usize, usize)> = Vec::new();
        let mut choose = |n: usize| {
            let c = prefix.get(taken.len()).copied().unwrap_or(0);
            taken.push((c, n));
            c
        };
        let backend = Backend::Oracle(OracleBackend::new(cfg.oracle));
        let report = sim::run(s.setup.clone(), cfg, backend, Policy::Oracle(&mut choose))?;
        if report.status == RunStatus::StepBudgetExhausted {
            return Err(HarnessError::BoundsExceeded(format!(
                "a reference run did not finish within {} steps",
                cfg.max_steps
            )));
        }
        out.insert(report.outcome);
        for i in prefix.len()..taken.len() {
            for alt in 1..taken[i].1 {
                let mut next: Vec<usize> = taken[..i].iter().map(|(c, _)| *c).collect();
                next.push(alt);
                todo.push(next);
            }
        }
    }
    Ok(out)
}

/// Starts a task that synchronizes on each event in turn, stopping at the
/// first error. Its result is the list of rendered values. Only valid inside
/// a harness run.
pub fn spawn_script(name: impl Into<String>, events: Vec<AnyEvent>) {
    match context::current_sim() {
        Some(ctx) => ctx.spawn_script(Some(name.into()), events),
        None => panic!("spawn_script is only available inside a harness run"),
    }
}

/// Channels handed to an event under test and its context.
pub type Chans = [Channel<i64>];

type Builder<T> = Arc<dyn Fn(&Chans) -> Event<T> + Send + Sync>;

/// Partner tasks around an event under test, over a fixed set of integer
/// channels.
#[derive(Clone)]
pub struct EquivContext {
    pub name: String,
    pub channels: usize,
    pub partners: Arc<dyn Fn(&Chans) + Send + Sync>,
}

impl EquivContext {
    pub fn new(name: impl Into<String>, channels: usize, partners: impl Fn(&Chans) + Send + Sync + 'static) -> Self {
        EquivContext {
            name: name.into(),
            channels,
            partners: Arc::new(partners),
        }
    }

    /// The scenario running `subject` (built over this context's channels)
    /// in a task named `subject`.
    pub fn scenario<T: Payload>(&self, subject: Builder<T>) -> Scenario {
        let n = self.channels;
        let partners = self.partners.clone();
        Scenario::new(self.name.clone(), move || {
            let chans: Vec<Channel<i64>> = (0..n).map(|_| new_channel()).collect();
            partners(&chans);
            let ev = subject(&chans);
            crate::spawn_named("subject", move || crate::sync(ev));
        })
    }
}

fn script(name: &str, evs: Vec<Event<()>>) {
    spawn_script(name, evs.iter().map(|e| e.erase()).collect());
}

/// Contexts over two channels `c0`, `c1`: nothing, single senders and
/// receivers, competing senders, two-sync and one-sync senders, and a relay.
pub fn standard_contexts() -> Vec<EquivContext> {
    use crate::event::{recv_evt, send_evt, then_evt};
    let recv_unit = |c: Channel<i64>| then_evt(recv_evt(c), |_: i64| crate::always_evt(()));
    vec![
        EquivContext::new("alone", 2, |_| {}),
        EquivContext::new("sender-c0", 2, |c| script("p", vec![send_evt(c[0], 1)])),
        EquivContext::new("receiver-c0", 2, move |c| script("p", vec![recv_unit(c[0])])),
        EquivContext::new("two-senders-c0", 2, |c| {
            script("p", vec![send_evt(c[0], 1)]);
            script("q", vec![send_evt(c[0], 2)]);
        }),
        EquivContext::new("two-sync-sender", 2, |c| {
            script("p", vec![send_evt(c[0], 4), send_evt(c[1], 5)])
        }),
        EquivContext::new("one-sync-sender", 2, |c| {
            let (c0, c1) = (c[0], c[1]);
            script("p", vec![then_evt(send_evt(c0, 4), move |()| send_evt(c1, 5))])
        }),
        EquivContext::new("receivers-c0-c1", 2, move |c| {
            script("p", vec![recv_unit(c[0])]);
            script("q", vec![recv_unit(c[1])]);
        }),
        EquivContext::new("sender-c0-receiver-c1", 2, move |c| {
            script("p", vec![send_evt(c[0], 3)]);
            script("q", vec![recv_unit(c[1])]);
        }),
        EquivContext::new("relay-c0-to-c1", 2, |c| {
            let c1 = c[1];
            script("p", vec![then_evt(recv_evt(c[0]), move |x: i64| send_evt(c1, x + 1))]);
            script("q", vec![send_evt(c[0], 7)]);
        }),
    ]
}

/// True iff the two events have the same oracle outcome set in every
/// context. Events are given as builders over the context's channels.
pub fn outcome_equiv<T, F1, F2>(
    e1: F1,
    e2: F2,
    contexts: &[EquivContext],
    cfg: &SimConfig,
) -> Result<bool, HarnessError>
where
    T: Payload,
    F1: Fn(&Chans) -> Event<T> + Send + Sync + 'static,
    F2: Fn(&Chans) -> Event<T> + Send + Sync + 'static,
{
    let (e1, e2): (Builder<T>, Builder<T>) = (Arc::new(e1), Arc::new(e2));
    for ctx in contexts {
        let a = explore_outcomes(&ctx.scenario(e1.clone()), cfg)?;
        let b = explore_outcomes(&ctx.scenario(e2.clone()), cfg)?;
        if a != b {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests;
