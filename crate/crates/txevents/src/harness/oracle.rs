//! Reference semantics used to check the engine.
//!
//! Deliberately naive: every pending synchronization is kept as a list of
//! normal forms, and every way of pairing offers among every subset of
//! pending synchronizations is tried, up to the configured bounds. A
//! transaction exists exactly when some such pairing drives every involved
//! synchronization to completion.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;
use std::time::Duration;

use super::{CommitSummary, HarnessError, OracleBounds};
use crate::engine::{Effects, SyncId, TimerKey};
use crate::error::SyncError;
use crate::event::{invoke, AnyEvent, ChannelId, Cont, Node};
use crate::value::Value;

/// Continuation calls allowed while normalizing one term.
const FUEL: usize = 10_000;
/// Joint states visited per move enumeration.
const MAX_STATES: usize = 500_000;

/// A term with no further internal reduction available.
#[derive(Clone)]
enum Normal {
    Done(Value),
    Send(ChannelId, Value, Vec<Cont>),
    Recv(ChannelId, Vec<Cont>),
    Sleep(Duration, Vec<Cont>),
}

enum Stop {
    Raised(SyncError),
    Diverged,
}

/// Rewrites `node` under the continuation stack `ks` (innermost last) to its
/// normal forms, left choices first. A delay reached after a communication
/// can never fire and is dropped.
fn normalize(node: &Arc<Node>, ks: Vec<Cont>, communicated: bool, fuel: &mut usize) -> Result<Vec<Normal>, Stop> {
    match &**node {
        Node::Always(v) => feed(v.clone(), ks, communicated, fuel),
        Node::Never => Ok(vec![]),
        Node::Send(c, v) => Ok(vec![Normal::Send(*c, v.clone(), ks)]),
        Node::Recv(c) => Ok(vec![Normal::Recv(*c, ks)]),
        Node::Choose(l, r) => {
            let mut out = normalize(l, ks.clone(), communicated, fuel)?;
            out.extend(normalize(r, ks, communicated, fuel)?);
            Ok(out)
        }
        Node::Then(e, k) => {
            let mut ks = ks;
            ks.push(k.clone());
            normalize(e, ks, communicated, fuel)
        }
        Node::Delay(d) => Ok(if communicated {
            vec![]
        } else {
            vec![Normal::Sleep(*d, ks)]
        }),
    }
}

/// Returns `v` to the innermost continuation.
fn feed(v: Value, mut ks: Vec<Cont>, communicated: bool, fuel: &mut usize) -> Result<Vec<Normal>, Stop> {
    let Some(k) = ks.pop() else {
        return Ok(vec![Normal::Done(v)]);
    };
    if *fuel == 0 {
        return Err(Stop::Diverged);
    }
    *fuel -= 1;
    let next = invoke(&k, &v).map_err(Stop::Raised)?;
    normalize(&next, ks, communicated, fuel)
}

fn diverged() -> HarnessError {
    HarnessError::BoundsExceeded("a continuation chain did not reach a communication".into())
}

struct OSync {
    /// Communicable or completed forms; sleeping forms live in `timers`.
    forms: Vec<Normal>,
    timers: Vec<TimerKey>,
}

/// A scheduler decision available at a quiescent point.
#[derive(Clone)]
pub(crate) enum Move {
    Commit {
        results: Vec<(SyncId, Value)>,
        pairs: Vec<(ChannelId, Value, SyncId, SyncId)>,
    },
    Abort(SyncId, SyncError),
}

pub(crate) struct OracleBackend {
    bounds: OracleBounds,
    next_sync: u64,
    next_timer: u64,
    next_txn: u64,
    pending: BTreeMap<SyncId, OSync>,
    timers: BTreeMap<TimerKey, (SyncId, Vec<Cont>)>,
    /// A fatal problem found while registering; reported by `moves`.
    fault: Option<HarnessError>,
}

impl OracleBackend {
    pub(crate) fn new(bounds: OracleBounds) -> Self {
        OracleBackend {
            bounds,
            next_sync: 0,
            next_timer: 0,
            next_txn: 0,
            pending: BTreeMap::new(),
            timers: BTreeMap::new(),
            fault: None,
        }
    }

    pub(crate) fn pending_count(&self) -> usize {
        self.pending.len()
    }

    fn install(&mut self, id: SyncId, forms: Vec<Normal>, now: Duration, fx: &mut Effects) {
        let entry = self.pending.entry(id).or_insert(OSync {
            forms: Vec::new(),
            timers: Vec::new(),
        });
        for f in forms {
            match f {
                Normal::Sleep(d, ks) => {
                    self.next_timer += 1;
                    let key = TimerKey(self.next_timer);
                    entry.timers.push(key);
                    self.timers.insert(key, (id, ks));
                    fx.timers_set.push((key, now + d));
                }
                other => entry.forms.push(other),
            }
        }
    }

    fn remove(&mut self, id: SyncId, fx: &mut Effects) {
        if let Some(s) = self.pending.remove(&id) {
            for key in s.timers {
                if self.timers.remove(&key).is_some() {
                    fx.timers_cancelled.push(key);
                }
            }
        }
    }

    pub(crate) fn register(&mut self, ev: &AnyEvent, now: Duration) -> (SyncId, Effects) {
        self.next_sync += 1;
        let id = SyncId(self.next_sync);
        let mut fx = Effects::default();
        let mut fuel = FUEL;
        match normalize(&ev.node, Vec::new(), false, &mut fuel) {
            Ok(forms) => self.install(id, forms, now, &mut fx),
            Err(Stop::Raised(e)) => fx.resolved.push((id, Err(e))),
            Err(Stop::Diverged) => self.fault = Some(diverged()),
        }
        (id, fx)
    }

    pub(crate) fn fire_timer(&mut self, key: TimerKey, now: Duration) -> Effects {
        let mut fx = Effects::default();
        let Some((id, ks)) = self.timers.remove(&key) else {
            return fx;
        };
        if let Some(s) = self.pending.get_mut(&id) {
            s.timers.retain(|k| *k != key);
        }
        let mut fuel = FUEL;
        match feed(Value::unit(), ks, false, &mut fuel) {
            Ok(forms) => self.install(id, forms, now, &mut fx),
            Err(Stop::Raised(e)) => {
                self.remove(id, &mut fx);
                fx.resolved.push((id, Err(e)));
            }
            Err(Stop::Diverged) => self.fault = Some(diverged()),
        }
        fx
    }

    /// Every distinct commit and abort available among the pending
    /// synchronizations, in a deterministic order.
    pub(crate) fn moves(&mut self) -> Result<Vec<Move>, HarnessError> {
        if let Some(e) = self.fault.take() {
            return Err(e);
        }
        let mut x = Explorer {
            pending: &self.pending,
            bounds: &self.bounds,
            visited: HashSet::new(),
            commits: BTreeMap::new(),
            aborts: BTreeMap::new(),
            fault: None,
        };
        for (id, s) in &self.pending {
            for f in &s.forms {
                if let Normal::Done(v) = f {
                    x.record_commit_of(vec![(*id, v.clone())], &[]);
                }
            }
        }
        x.explore(Vec::new(), Vec::new());
        if let Some(e) = x.fault {
            return Err(e);
        }
        let mut out: Vec<Move> = x.commits.into_values().collect();
        out.extend(x.aborts.into_iter().map(|((id, _), e)| Move::Abort(id, e)));
        Ok(out)
    }

    pub(crate) fn apply(&mut self, mv: Move) -> (Effects, Option<CommitSummary>) {
        let mut fx = Effects::default();
        match mv {
            Move::Abort(id, e) => {
                self.remove(id, &mut fx);
                fx.resolved.push((id, Err(e)));
                (fx, None)
            }
            Move::Commit { results, pairs } => {
                self.next_txn += 1;
                for (id, v) in &results {
                    self.remove(*id, &mut fx);
                    fx.resolved.push((*id, Ok(v.clone())));
                }
                let summary = CommitSummary {
                    txn: self.next_txn,
                    participants: results.iter().map(|(id, _)| *id).collect(),
                    tasks: Vec::new(),
                    pairs: pairs.iter().map(|(c, v, _, _)| (*c, v.render())).collect(),
                };
                (fx, Some(summary))
            }
        }
    }
}

#[derive(Clone)]
struct Member {
    sync: SyncId,
    form: Normal,
    comms: usize,
    /// Which root form and which successor forms were taken, with the values
    /// received; identifies the member's state.
    history: Vec<String>,
}

type Pair = (ChannelId, Value, SyncId, SyncId);

struct Explorer<'a> {
    pending: &'a BTreeMap<SyncId, OSync>,
    bounds: &'a OracleBounds,
    visited: HashSet<String>,
    commits: BTreeMap<String, Move>,
    aborts: BTreeMap<(SyncId, String), SyncError>,
    fault: Option<HarnessError>,
}

/// Endpoint of a prospective pair: an existing member, or form `i` of a
/// pending synchronization recruited into the transaction.
#[derive(Clone, Copy)]
enum End {
    Member(usize),
    Recruit(SyncId, usize),
}

impl Explorer<'_> {
    fn explore(&mut self, mut members: Vec<Member>, pairs: Vec<Pair>) {
        if self.fault.is_some() {
            return;
        }
        members.sort_by_key(|m| m.sync);
        let key = state_key(&members, &pairs);
        if !self.visited.insert(key) {
            return;
        }
        if self.visited.len() > MAX_STATES {
            self.fault = Some(HarnessError::BoundsExceeded("oracle state budget exhausted".into()));
            return;
        }
        if !members.is_empty() && members.iter().all(|m| matches!(m.form, Normal::Done(_))) {
            self.record_commit(&members, &pairs);
            return;
        }
        if pairs.len() >= self.bounds.max_comms {
            return;
        }
        let in_txn = |id: SyncId| members.iter().any(|m| m.sync == id);
        let mut senders: Vec<(End, SyncId, ChannelId)> = Vec::new();
        let mut receivers: Vec<(End, SyncId, ChannelId)> = Vec::new();
        for (i, m) in members.iter().enumerate() {
            match &m.form {
                Normal::Send(c, _, _) => senders.push((End::Member(i), m.sync, *c)),
                Normal::Recv(c, _) => receivers.push((End::Member(i), m.sync, *c)),
                _ => {}
            }
        }
        for (id, s) in self.pending {
            if in_txn(*id) {
                continue;
            }
            for (k, f) in s.forms.iter().enumerate() {
                match f {
                    Normal::Send(c, _, _) => senders.push((End::Recruit(*id, k), *id, *c)),
                    Normal::Recv(c, _) => receivers.push((End::Recruit(*id, k), *id, *c)),
                    _ => {}
                }
            }
        }
        let mut moves: Vec<(End, End)> = Vec::new();
        for (s, sid, sc) in &senders {
            for (r, rid, rc) in &receivers {
                if sc == rc && sid != rid {
                    moves.push((*s, *r));
                }
            }
        }
        for (s, r) in moves {
            self.pair_up(&members, &pairs, s, r);
        }
    }

    fn resolve(&self, members: &mut Vec<Member>, end: End) -> usize {
        match end {
            End::Member(i) => i,
            End::Recruit(id, k) => {
                members.push(Member {
                    sync: id,
                    form: self.pending[&id].forms[k].clone(),
                    comms: 0,
                    history: vec![format!("a{k}")],
                });
                members.len() - 1
            }
        }
    }

    fn pair_up(&mut self, members: &[Member], pairs: &[Pair], s: End, r: End) {
        let mut members = members.to_vec();
        let si = self.resolve(&mut members, s);
        let ri = self.resolve(&mut members, r);
        let (sender, receiver) = (members[si].clone(), members[ri].clone());
        if sender.comms >= self.bounds.max_unroll || receiver.comms >= self.bounds.max_unroll {
            return;
        }
        let Normal::Send(c, v, sks) = sender.form else {
            unreachable!()
        };
        let Normal::Recv(_, rks) = receiver.form else {
            unreachable!()
        };
        let Some(after_send) = self.step(sender.sync, Value::unit(), sks) else {
            return;
        };
        let Some(after_recv) = self.step(receiver.sync, v.clone(), rks) else {
            return;
        };
        let mut pairs = pairs.to_vec();
        pairs.push((c, v.clone(), sender.sync, receiver.sync));
        for (a, sf) in after_send.iter().enumerate() {
            for (b, rf) in after_recv.iter().enumerate() {
                let mut next = members.clone();
                next[si].form = sf.clone();
                next[si].comms += 1;
                next[si].history.push(format!("s{c}#{a}"));
                next[ri].form = rf.clone();
                next[ri].comms += 1;
                next[ri].history.push(format!("r{c}={}#{b}", v.render()));
                self.explore(next, pairs.clone());
            }
        }
    }

    /// Resumes one side of a pair; a raise becomes an abort move.
    fn step(&mut self, sync: SyncId, v: Value, ks: Vec<Cont>) -> Option<Vec<Normal>> {
        let mut fuel = FUEL;
        match feed(v, ks, true, &mut fuel) {
            Ok(forms) => Some(forms),
            Err(Stop::Raised(e)) => {
                self.aborts.entry((sync, e.kind())).or_insert(e);
                None
            }
            Err(Stop::Diverged) => {
                self.fault = Some(diverged());
                None
            }
        }
    }

    fn record_commit(&mut self, members: &[Member], pairs: &[Pair]) {
        let results: Vec<(SyncId, Value)> = members
            .iter()
            .map(|m| {
                let Normal::Done(v) = &m.form else { unreachable!() };
                (m.sync, v.clone())
            })
            .collect();
        self.record_commit_of(results, pairs);
    }

    fn record_commit_of(&mut self, results: Vec<(SyncId, Value)>, pairs: &[Pair]) {
        let mut sorted = pairs.to_vec();
        sorted.sort_by_key(|(c, v, s, r)| (*c, v.render(), *s, *r));
        let key = format!(
            "{:?}|{:?}",
            results.iter().map(|(id, v)| (id.0, v.render())).collect::<Vec<_>>(),
            sorted
                .iter()
                .map(|(c, v, s, r)| (c.0, v.render(), s.0, r.0))
                .collect::<Vec<_>>()
        );
        self.commits
            .entry(key)
            .or_insert(Move::Commit { results, pairs: sorted });
    }
}

fn state_key(members: &[Member], pairs: &[Pair]) -> String {
    let mut ps: Vec<(u64, String, u64, u64)> = pairs.iter().map(|(c, v, s, r)| (c.0, v.render(), s.0, r.0)).collect();
    ps.sort();
    let ms: Vec<(u64, &Vec<String>)> = members.iter().map(|m| (m.sync.0, &m.history)).collect();
    format!("{ms:?}|{ps:?}")
}
