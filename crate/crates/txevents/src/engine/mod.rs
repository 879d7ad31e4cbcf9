//! The synchronization engine.
//!
//! [`Coordinator`] owns every pending synchronization and serializes all
//! engine state changes. It knows nothing about threads or clocks: hosts
//! (the real-thread [`Runtime`](crate::Runtime) and the deterministic
//! harness) feed it registrations, search rounds and timer firings, and apply
//! the [`Effects`] it hands back.

mod frontier;
mod search;
mod trace;
pub mod txn;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::SyncError;
use crate::event::AnyEvent;
use crate::value::Value;
use frontier::{Alt, AltKind, Expander, Frontier};
use search::{search, SearchLimits};

pub use trace::{JsonLinesSink, TraceKind, TraceRecord, TraceSink, VecSink};
pub use txn::{BranchPath, Direction, MatchedPair, Participant, Side, Step, Transaction, TxnViolation};

/// Identity of one `sync` call.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize)]
#[serde(transparent)]
pub struct SyncId(pub u64);

impl fmt::Display for SyncId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct TimerKey(pub u64);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EngineConfig {
    /// Upper bound on matched pairs in one transaction. Recursive events such
    /// as server loops unroll lazily; deeper unrollings are not explored.
    pub max_comms_per_txn: usize,
    /// Upper bound on live branches kept per synchronization (and on
    /// continuation calls while expanding one frontier).
    pub max_branches_per_sync: usize,
    /// Seeds the choice among simultaneously committable transactions.
    pub seed: u64,
    /// Run the transaction validator on every commit; on by default in debug
    /// builds.
    pub validate_commits: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            max_comms_per_txn: 32,
            max_branches_per_sync: 4096,
            seed: 0,
            validate_commits: cfg!(debug_assertions),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("{0} must be at least 1")]
    ZeroBound(&'static str),
    #[error("{name} is {value}, above the supported maximum {max}")]
    AboveMax {
        name: &'static str,
        value: usize,
        max: usize,
    },
}

impl EngineConfig {
    pub fn with_seed(seed: u64) -> Self {
        EngineConfig {
            seed,
            ..EngineConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_comms_per_txn == 0 {
            return Err(ConfigError::ZeroBound("max_comms_per_txn"));
        }
        if self.max_branches_per_sync == 0 {
            return Err(ConfigError::ZeroBound("max_branches_per_sync"));
        }
        Ok(())
    }
}

/// What a coordinator call changed; the host applies it.
#[derive(Default, Debug)]
pub struct Effects {
    pub resolved: Vec<(SyncId, Result<Value, SyncError>)>,
    pub timers_set: Vec<(TimerKey, Duration)>,
    pub timers_cancelled: Vec<TimerKey>,
    pub commits: Vec<Transaction>,
}

impl Effects {
    pub fn progressed(&self) -> bool {
        !self.resolved.is_empty()
    }

    fn merge(&mut self, other: Effects) {
        self.resolved.extend(other.resolved);
        self.timers_set.extend(other.timers_set);
        self.timers_cancelled.extend(other.timers_cancelled);
        self.commits.extend(other.commits);
    }
}

/// Result of one search over the pending set.
#[derive(Debug)]
pub enum SearchOutcome {
    Found(Transaction),
    /// A continuation raised while exploring; the sync must abort.
    Failed {
        sync: SyncId,
        error: SyncError,
    },
    NoneFound,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CommitError {
    #[error("sync {0} is no longer pending")]
    AlreadyResolved(SyncId),
}

/// Candidates gathered per round before the seeded pick.
const MAX_CANDIDATES: usize = 16;

struct Pending {
    root: Arc<Frontier>,
    timers: Vec<TimerKey>,
}

struct TimerEntry {
    sync: SyncId,
    alt: Arc<Alt>,
}

pub struct Coordinator {
    cfg: EngineConfig,
    next_sync: u64,
    next_txn: u64,
    next_timer: u64,
    next_id: u64,
    pending: BTreeMap<SyncId, Pending>,
    timers: BTreeMap<TimerKey, TimerEntry>,
    rng: ChaCha8Rng,
    trace: trace::TraceLog,
    dirty: bool,
}

impl Coordinator {
    pub fn new(cfg: EngineConfig) -> Self {
        Coordinator::with_trace(cfg, true, None)
    }

    /// `keep` retains records in memory (see [`Coordinator::trace`]); `sink`
    /// additionally streams them.
    pub fn with_trace(cfg: EngineConfig, keep: bool, sink: Option<Arc<dyn TraceSink>>) -> Self {
        Coordinator {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            next_sync: 0,
            next_txn: 0,
            next_timer: 0,
            next_id: 0,
            pending: BTreeMap::new(),
            timers: BTreeMap::new(),
            trace: trace::TraceLog::new(keep, sink),
            dirty: false,
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn trace(&self) -> &[TraceRecord] {
        self.trace.records()
    }

    /// True when the pending set changed since the last fruitless search.
    pub fn is_dirty(&self) -> bool {
        self.dirty
    }

    pub fn pending(&self) -> impl Iterator<Item = SyncId> + '_ {
        self.pending.keys().copied()
    }

    pub fn is_pending(&self, sync: SyncId) -> bool {
        self.pending.contains_key(&sync)
    }

    fn expander(&mut self, allow_sleep: bool) -> Expander<'_> {
        Expander {
            next_id: &mut self.next_id,
            max_alts: self.cfg.max_branches_per_sync,
            allow_sleep,
        }
    }

    /// Starts a synchronization on `ev` at time `now`.
    pub fn register(&mut self, ev: &AnyEvent, now: Duration) -> (SyncId, Effects) {
        self.next_sync += 1;
        let id = SyncId(self.next_sync);
        let mut fx = Effects::default();
        match self.expander(true).root(&ev.node) {
            Err(e) => self.abort_unregistered(id, e, &mut fx),
            Ok(f) => {
                self.pending.insert(
                    id,
                    Pending {
                        root: Arc::new(Frontier::default()),
                        timers: Vec::new(),
                    },
                );
                self.install_root(id, f, Vec::new(), now, &mut fx);
            }
        }
        (id, fx)
    }

    /// Replaces `id`'s root frontier with `kept` plus the branches of
    /// `fresh`, tracing new offers and arming new delays.
    fn install_root(&mut self, id: SyncId, fresh: Frontier, kept: Vec<Arc<Alt>>, now: Duration, fx: &mut Effects) {
        for alt in &fresh.alts {
            match &alt.kind {
                AltKind::Send { channel, value, .. } => {
                    self.trace
                        .push(id, TraceKind::Offer, Some(*channel), Some(value.render()), None)
                }
                AltKind::Recv { channel, .. } => self.trace.push(id, TraceKind::Offer, Some(*channel), None, None),
                AltKind::Sleep { after, .. } => {
                    self.next_timer += 1;
                    let key = TimerKey(self.next_timer);
                    let deadline = now + *after;
                    self.trace.push(
                        id,
                        TraceKind::TimerSet,
                        None,
                        Some(format!("{:?}", deadline.as_secs_f64())),
                        None,
                    );
                    self.timers.insert(
                        key,
                        TimerEntry {
                            sync: id,
                            alt: alt.clone(),
                        },
                    );
                    self.pending.get_mut(&id).unwrap().timers.push(key);
                    fx.timers_set.push((key, deadline));
                }
                AltKind::Done(_) => {}
            }
        }
        if fresh.truncated {
            self.trace
                .push(id, TraceKind::Prune, None, Some("branch bound reached".into()), None);
        }
        let mut alts = kept;
        alts.extend(fresh.alts);
        if alts.is_empty() {
            self.trace.push(id, TraceKind::Prune, None, None, None);
        }
        self.next_id += 1;
        let root = Frontier {
            id: self.next_id,
            alts,
            pruned: fresh.pruned,
            truncated: fresh.truncated,
        };
        self.pending.get_mut(&id).unwrap().root = Arc::new(root);
        self.dirty = true;
    }

    fn abort_unregistered(&mut self, id: SyncId, e: SyncError, fx: &mut Effects) {
        self.trace
            .push(id, TraceKind::Exception, None, Some(e.to_string()), None);
        self.trace.push(id, TraceKind::Abort, None, None, None);
        fx.resolved.push((id, Err(e)));
    }

    fn retire(&mut self, id: SyncId, fx: &mut Effects) {
        if let Some(p) = self.pending.remove(&id) {
            for key in p.timers {
                if self.timers.remove(&key).is_some() {
                    fx.timers_cancelled.push(key);
                }
            }
        }
    }

    fn abort(&mut self, id: SyncId, e: SyncError) -> Effects {
        let mut fx = Effects::default();
        self.retire(id, &mut fx);
        self.abort_unregistered(id, e, &mut fx);
        self.dirty = true;
        fx
    }

    /// Searches the pending set for a committable transaction.
    ///
    /// Deterministic given the pending set and the coordinator's seed; when
    /// several transactions are found the seeded generator picks one.
    pub fn find_transaction(&mut self) -> SearchOutcome {
        let roots: BTreeMap<SyncId, Arc<Frontier>> = self.pending.iter().map(|(id, p)| (*id, p.root.clone())).collect();
        let limits = SearchLimits {
            max_pairs: self.cfg.max_comms_per_txn,
            max_alts: self.cfg.max_branches_per_sync,
            max_states: self.cfg.max_branches_per_sync.saturating_mul(roots.len().max(1)),
            max_candidates: MAX_CANDIDATES,
        };
        let report = search(&roots, &mut self.next_id, &limits);

        for ex in &report.explored {
            self.trace.push(
                ex.sender,
                TraceKind::TentativeMatch,
                Some(ex.channel),
                Some(ex.value.render()),
                None,
            );
        }
        for sync in &report.pruned {
            self.trace.push(*sync, TraceKind::Prune, None, None, None);
        }
        if let Some((sync, error)) = report.failure {
            return SearchOutcome::Failed { sync, error };
        }
        if report.candidates.is_empty() {
            if let Some(first) = roots.keys().next() {
                if report.comm_bound_hit {
                    self.trace
                        .push(*first, TraceKind::Prune, None, Some("comm bound reached".into()), None);
                }
                if report.state_budget_hit {
                    self.trace.push(
                        *first,
                        TraceKind::Prune,
                        None,
                        Some("search budget exhausted".into()),
                        None,
                    );
                }
            }
            return SearchOutcome::NoneFound;
        }

        let pick = self.rng.gen_range(0..report.candidates.len());
        let cand = &report.candidates[pick];
        let mut participants = Vec::with_capacity(cand.members.len());
        for (sync, f) in &cand.members {
            let done: Vec<&Arc<Alt>> = f.alts.iter().filter(|a| a.is_done()).collect();
            let alt = done[self.rng.gen_range(0..done.len())];
            let AltKind::Done(value) = &alt.kind else {
                unreachable!()
            };
            participants.push(Participant {
                sync: *sync,
                path: alt.path.to_branch_path(),
                value: value.clone(),
            });
        }
        let matching = cand
            .pairs
            .iter()
            .map(|p| MatchedPair {
                channel: p.channel,
                value: p.value.clone(),
                sender: p.sender,
                send_step: p.send_step,
                receiver: p.receiver,
                recv_step: p.recv_step,
            })
            .collect();
        SearchOutcome::Found(Transaction {
            id: 0,
            participants,
            matching,
        })
    }

    /// Atomically resolves every participant of `txn`.
    pub fn commit(&mut self, mut txn: Transaction) -> Result<Effects, CommitError> {
        if let Some(p) = txn.participants.iter().find(|p| !self.pending.contains_key(&p.sync)) {
            return Err(CommitError::AlreadyResolved(p.sync));
        }
        if self.cfg.validate_commits {
            if let Err(v) = txn.validate() {
                panic!("engine produced an invalid transaction: {v}");
            }
        }
        self.next_txn += 1;
        txn.id = self.next_txn;
        for pair in &txn.matching {
            self.trace.push(
                pair.sender,
                TraceKind::TentativeMatch,
                Some(pair.channel),
                Some(pair.value.render()),
                Some(txn.id),
            );
        }
        self.trace
            .push(txn.participants[0].sync, TraceKind::Commit, None, None, Some(txn.id));
        let mut fx = Effects::default();
        for p in &txn.participants {
            self.retire(p.sync, &mut fx);
            fx.resolved.push((p.sync, Ok(p.value.clone())));
        }
        fx.commits.push(txn);
        self.dirty = true;
        Ok(fx)
    }

    /// One search round: commits or aborts at most one thing. Clears the
    /// dirty flag when nothing could be done.
    pub fn step(&mut self, _now: Duration) -> Effects {
        if !self.dirty {
            return Effects::default();
        }
        match self.find_transaction() {
            SearchOutcome::Found(txn) => self
                .commit(txn)
                .expect("a freshly found transaction has only pending participants"),
            SearchOutcome::Failed { sync, error } => self.abort(sync, error),
            SearchOutcome::NoneFound => {
                self.dirty = false;
                Effects::default()
            }
        }
    }

    /// Runs search rounds until nothing more can commit.
    pub fn settle(&mut self, now: Duration) -> Effects {
        let mut fx = Effects::default();
        while self.dirty {
            fx.merge(self.step(now));
        }
        fx
    }

    /// Fires a delay armed for some pending sync. Stale keys are ignored.
    pub fn fire_timer(&mut self, key: TimerKey, now: Duration) -> Effects {
        let mut fx = Effects::default();
        let Some(entry) = self.timers.remove(&key) else {
            return fx;
        };
        let id = entry.sync;
        self.trace.push(id, TraceKind::TimerFire, None, None, None);
        let AltKind::Sleep { stack, .. } = &entry.alt.kind else {
            unreachable!()
        };
        let resumed = self.expander(true).resume(stack, Value::unit(), entry.alt.path.clone());
        match resumed {
            Err(e) => fx.merge(self.abort(id, e)),
            Ok(f) => {
                let p = self.pending.get_mut(&id).expect("armed timers belong to pending syncs");
                p.timers.retain(|k| *k != key);
                let kept: Vec<Arc<Alt>> = p.root.alts.iter().filter(|a| a.id != entry.alt.id).cloned().collect();
                self.install_root(id, f, kept, now, &mut fx);
            }
        }
        fx
    }

    /// Resolves every pending sync with [`SyncError::Shutdown`].
    pub fn shutdown(&mut self) -> Effects {
        let mut fx = Effects::default();
        let ids: Vec<SyncId> = self.pending.keys().copied().collect();
        for id in ids {
            self.retire(id, &mut fx);
            self.trace
                .push(id, TraceKind::Abort, None, Some("shutdown".into()), None);
            fx.resolved.push((id, Err(SyncError::Shutdown)));
        }
        self.dirty = false;
        fx
    }
}

#[cfg(test)]
mod tests;
