//! Transaction search over the pending synchronizations.
//!
//! A search state is a set of *members* (synchronizations already committed
//! to the candidate transaction), each with its current frontier. A move
//! pairs one send offer with one receive offer on the same channel, taken
//! from two different synchronizations that are either members or still
//! untouched pending syncs (which are recruited by the move). Rendezvous are
//! linearized one at a time, so every candidate's matching is acyclic by
//! construction. A state is a candidate transaction once every member has a
//! completed branch.
//!
//! States are keyed by their members' frontier ids: independent rendezvous
//! performed in different orders reach the same frontiers (successors are
//! memoized per branch and input value), so each state is explored once.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use super::frontier::{Alt, AltKind, Expander, Frontier};
use super::SyncId;
use crate::error::SyncError;
use crate::event::ChannelId;
use crate::value::Value;

pub(crate) struct PendingPair {
    pub channel: ChannelId,
    pub value: Value,
    pub sender: SyncId,
    pub send_step: usize,
    pub receiver: SyncId,
    pub recv_step: usize,
}

pub(crate) struct Candidate {
    pub members: Vec<(SyncId, Arc<Frontier>)>,
    pub pairs: Vec<PendingPair>,
}

/// A rendezvous the search tried, for the trace.
pub(crate) struct Explored {
    pub sender: SyncId,
    pub channel: ChannelId,
    pub value: Value,
}

pub(crate) struct SearchLimits {
    pub max_pairs: usize,
    pub max_alts: usize,
    pub max_states: usize,
    pub max_candidates: usize,
}

pub(crate) struct SearchReport {
    pub candidates: Vec<Candidate>,
    pub failure: Option<(SyncId, SyncError)>,
    pub explored: Vec<Explored>,
    /// Syncs with a branch discarded right after a tentative match.
    pub pruned: Vec<SyncId>,
    pub comm_bound_hit: bool,
    pub state_budget_hit: bool,
}

struct Offer {
    sync: SyncId,
    index: usize,
    alt: Arc<Alt>,
}

type Members = Vec<(SyncId, Arc<Frontier>)>;

type Expansions = Vec<(Option<Value>, Arc<Frontier>)>;

struct Search<'a> {
    pending: &'a BTreeMap<SyncId, Arc<Frontier>>,
    next_id: &'a mut u64,
    limits: &'a SearchLimits,
    cache: HashMap<u64, Expansions>,
    visited: HashSet<Vec<(SyncId, u64)>>,
    explored_keys: HashSet<(SyncId, SyncId, ChannelId, String)>,
    pruned_keys: HashSet<u64>,
    states: usize,
    report: SearchReport,
}

pub(crate) fn search(
    pending: &BTreeMap<SyncId, Arc<Frontier>>,
    next_id: &mut u64,
    limits: &SearchLimits,
) -> SearchReport {
    let mut s = Search {
        pending,
        next_id,
        limits,
        cache: HashMap::new(),
        visited: HashSet::new(),
        explored_keys: HashSet::new(),
        pruned_keys: HashSet::new(),
        states: 0,
        report: SearchReport {
            candidates: Vec::new(),
            failure: None,
            explored: Vec::new(),
            pruned: Vec::new(),
            comm_bound_hit: false,
            state_budget_hit: false,
        },
    };
    for (&id, root) in pending {
        if root.has_done() && !s.stop() {
            s.report.candidates.push(Candidate {
                members: vec![(id, root.clone())],
                pairs: Vec::new(),
            });
        }
    }
    s.dfs(Vec::new(), Vec::new());
    s.report
}

impl Search<'_> {
    fn stop(&self) -> bool {
        self.report.failure.is_some()
            || self.report.state_budget_hit
            || self.report.candidates.len() >= self.limits.max_candidates
    }

    fn offers(&self, members: &Members) -> Vec<Offer> {
        let mut out = Vec::new();
        let mut push = |sync: SyncId, f: &Frontier| {
            for (index, alt) in f.alts.iter().enumerate() {
                if matches!(alt.kind, AltKind::Send { .. } | AltKind::Recv { .. }) {
                    out.push(Offer {
                        sync,
                        index,
                        alt: alt.clone(),
                    });
                }
            }
        };
        for (id, root) in self.pending {
            match members.iter().find(|(m, _)| m == id) {
                Some((_, f)) => push(*id, f),
                None => push(*id, root),
            }
        }
        out
    }

    fn successor(&mut self, sync: SyncId, alt: &Alt, received: Option<Value>) -> Option<Arc<Frontier>> {
        if let Some(hit) = self
            .cache
            .get(&alt.id)
            .and_then(|v| v.iter().find(|(input, _)| *input == received))
        {
            return Some(hit.1.clone());
        }
        let mut ex = Expander {
            next_id: self.next_id,
            max_alts: self.limits.max_alts,
            allow_sleep: false,
        };
        match ex.after_comm(alt, received.clone()) {
            Ok(f) => {
                if f.alts.is_empty() && self.pruned_keys.insert(alt.id) {
                    self.report.pruned.push(sync);
                }
                let f = Arc::new(f);
                self.cache.entry(alt.id).or_default().push((received, f.clone()));
                Some(f)
            }
            Err(e) => {
                self.report.failure = Some((sync, e));
                None
            }
        }
    }

    fn dfs(&mut self, members: Members, pairs: Vec<PendingPair>) {
        if self.stop() {
            return;
        }
        let key: Vec<(SyncId, u64)> = members.iter().map(|(s, f)| (*s, f.id)).collect();
        if !self.visited.insert(key) {
            return;
        }
        self.states += 1;
        if self.states > self.limits.max_states {
            self.report.state_budget_hit = true;
            return;
        }
        if !members.is_empty() && members.iter().all(|(_, f)| f.has_done()) {
            self.report.candidates.push(Candidate {
                members: members.clone(),
                pairs: pairs.iter().map(PendingPair::clone_pair).collect(),
            });
            if self.stop() {
                return;
            }
        }

        let mut offers = self.offers(&members);
        offers.sort_by_key(|o| (channel_of(&o.alt), o.sync, o.index));

        for s in offers.iter().filter(|o| matches!(o.alt.kind, AltKind::Send { .. })) {
            let AltKind::Send { channel, value, .. } = &s.alt.kind else {
                unreachable!()
            };
            for r in offers
                .iter()
                .filter(|o| o.sync != s.sync && matches!(o.alt.kind, AltKind::Recv { channel: c, .. } if c == *channel))
            {
                if pairs.len() >= self.limits.max_pairs {
                    self.report.comm_bound_hit = true;
                    return;
                }
                let note = (s.sync, r.sync, *channel, value.render());
                if self.explored_keys.insert(note) {
                    self.report.explored.push(Explored {
                        sender: s.sync,
                        channel: *channel,
                        value: value.clone(),
                    });
                }
                let Some(sf) = self.successor(s.sync, &s.alt, None) else {
                    return;
                };
                let Some(rf) = self.successor(r.sync, &r.alt, Some(value.clone())) else {
                    return;
                };

                let mut next = members.clone();
                set_member(&mut next, s.sync, sf);
                set_member(&mut next, r.sync, rf);
                let mut next_pairs: Vec<PendingPair> = pairs.iter().map(PendingPair::clone_pair).collect();
                next_pairs.push(PendingPair {
                    channel: *channel,
                    value: value.clone(),
                    sender: s.sync,
                    send_step: s.alt.path.len(),
                    receiver: r.sync,
                    recv_step: r.alt.path.len(),
                });
                self.dfs(next, next_pairs);
                if self.stop() {
                    return;
                }
            }
        }
    }
}

impl PendingPair {
    fn clone_pair(&self) -> PendingPair {
        PendingPair {
            channel: self.channel,
            value: self.value.clone(),
            sender: self.sender,
            send_step: self.send_step,
            receiver: self.receiver,
            recv_step: self.recv_step,
        }
    }
}

fn channel_of(alt: &Alt) -> ChannelId {
    match &alt.kind {
        AltKind::Send { channel, .. } | AltKind::Recv { channel, .. } => *channel,
        _ => ChannelId(u64::MAX),
    }
}

fn set_member(members: &mut Members, sync: SyncId, f: Arc<Frontier>) {
    match members.binary_search_by_key(&sync, |(s, _)| *s) {
        Ok(i) => members[i].1 = f,
        Err(i) => members.insert(i, (sync, f)),
    }
}
