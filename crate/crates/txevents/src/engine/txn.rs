//! Committed transactions and their validator.

use std::collections::BTreeMap;

use super::SyncId;
use crate::event::ChannelId;
use crate::value::Value;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Direction {
    Send,
    Recv,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Side {
    Left,
    Right,
}

#[derive(Clone, PartialEq, Debug)]
pub enum Step {
    Comm {
        channel: ChannelId,
        direction: Direction,
        value: Value,
    },
    ChoiceTaken(Side),
    ContinuationEntered,
}

/// The steps one synchronization took through its event tree.
#[derive(Clone, PartialEq, Debug, Default)]
pub struct BranchPath {
    pub steps: Vec<Step>,
}

impl BranchPath {
    pub fn comm_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.steps
            .iter()
            .enumerate()
            .filter(|(_, s)| matches!(s, Step::Comm { .. }))
            .map(|(i, _)| i)
    }
}

#[derive(Clone, PartialEq, Debug)]
pub struct Participant {
    pub sync: SyncId,
    pub path: BranchPath,
    pub value: Value,
}

/// A send step of one participant paired with a receive step of another.
#[derive(Clone, PartialEq, Debug)]
pub struct MatchedPair {
    pub channel: ChannelId,
    pub value: Value,
    pub sender: SyncId,
    pub send_step: usize,
    pub receiver: SyncId,
    pub recv_step: usize,
}

#[derive(Clone, PartialEq, Debug)]
pub struct Transaction {
    pub id: u64,
    pub participants: Vec<Participant>,
    /// In the order the rendezvous were linearized during search.
    pub matching: Vec<MatchedPair>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TxnViolation {
    #[error("sync {0} participates twice")]
    DuplicateParticipant(u64),
    #[error("pair {0} references a sync that is not a participant")]
    UnknownParticipant(usize),
    #[error("pair {0} matches a sync with itself")]
    SelfMatch(usize),
    #[error("pair {0} does not point at a matching send/recv step")]
    BadStep(usize),
    #[error("communication step {step} of sync {sync} is matched {count} times")]
    Unmatched { sync: u64, step: usize, count: usize },
    #[error("matching is cyclic once pairs are contracted")]
    Cyclic,
}

impl Transaction {
    pub fn participant(&self, sync: SyncId) -> Option<&Participant> {
        self.participants.iter().find(|p| p.sync == sync)
    }

    /// Checks every structural invariant a committed transaction must satisfy.
    pub fn validate(&self) -> Result<(), TxnViolation> {
        let mut by_sync: BTreeMap<SyncId, &Participant> = BTreeMap::new();
        for p in &self.participants {
            if by_sync.insert(p.sync, p).is_some() {
                return Err(TxnViolation::DuplicateParticipant(p.sync.0));
            }
        }

        // (sync, step) -> pair index
        let mut owner: BTreeMap<(SyncId, usize), Vec<usize>> = BTreeMap::new();
        for (i, pair) in self.matching.iter().enumerate() {
            if pair.sender == pair.receiver {
                return Err(TxnViolation::SelfMatch(i));
            }
            let (Some(s), Some(r)) = (by_sync.get(&pair.sender), by_sync.get(&pair.receiver)) else {
                return Err(TxnViolation::UnknownParticipant(i));
            };
            let send_ok = matches!(
                s.path.steps.get(pair.send_step),
                Some(Step::Comm { channel, direction: Direction::Send, value })
                    if *channel == pair.channel && *value == pair.value
            );
            let recv_ok = matches!(
                r.path.steps.get(pair.recv_step),
                Some(Step::Comm { channel, direction: Direction::Recv, value })
                    if *channel == pair.channel && *value == pair.value
            );
            if !send_ok || !recv_ok {
                return Err(TxnViolation::BadStep(i));
            }
            owner.entry((pair.sender, pair.send_step)).or_default().push(i);
            owner.entry((pair.receiver, pair.recv_step)).or_default().push(i);
        }

        for p in &self.participants {
            for step in p.path.comm_indices() {
                let count = owner.get(&(p.sync, step)).map_or(0, Vec::len);
                if count != 1 {
                    return Err(TxnViolation::Unmatched {
                        sync: p.sync.0,
                        step,
                        count,
                    });
                }
            }
        }

        // Contract each pair to a node; each path orders its own pairs.
        let n = self.matching.len();
        let mut succ = vec![Vec::new(); n];
        let mut indegree = vec![0usize; n];
        for p in &self.participants {
            let order: Vec<usize> = p.path.comm_indices().map(|step| owner[&(p.sync, step)][0]).collect();
            for w in order.windows(2) {
                succ[w[0]].push(w[1]);
                indegree[w[1]] += 1;
            }
        }
        let mut ready: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut seen = 0;
        while let Some(i) = ready.pop() {
            seen += 1;
            for &j in &succ[i] {
                indegree[j] -= 1;
                if indegree[j] == 0 {
                    ready.push(j);
                }
            }
        }
        if seen != n {
            return Err(TxnViolation::Cyclic);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn comm(ch: u64, direction: Direction, v: i64) -> Step {
        Step::Comm {
            channel: ChannelId(ch),
            direction,
            value: Value::new(v),
        }
    }

    fn pair(ch: u64, v: i64, s: u64, ss: usize, r: u64, rs: usize) -> MatchedPair {
        MatchedPair {
            channel: ChannelId(ch),
            value: Value::new(v),
            sender: SyncId(s),
            send_step: ss,
            receiver: SyncId(r),
            recv_step: rs,
        }
    }

    fn part(sync: u64, steps: Vec<Step>) -> Participant {
        Participant {
            sync: SyncId(sync),
            path: BranchPath { steps },
            value: Value::unit(),
        }
    }

    #[test]
    fn simple_pair_is_valid() {
        let t = Transaction {
            id: 1,
            participants: vec![
                part(1, vec![comm(1, Direction::Send, 5)]),
                part(2, vec![comm(1, Direction::Recv, 5)]),
            ],
            matching: vec![pair(1, 5, 1, 0, 2, 0)],
        };
        assert_eq!(t.validate(), Ok(()));
    }

    #[test]
    fn unmatched_comm_rejected() {
        let t = Transaction {
            id: 1,
            participants: vec![
                part(1, vec![comm(1, Direction::Send, 5), comm(1, Direction::Send, 6)]),
                part(2, vec![comm(1, Direction::Recv, 5)]),
            ],
            matching: vec![pair(1, 5, 1, 0, 2, 0)],
        };
        assert!(matches!(t.validate(), Err(TxnViolation::Unmatched { .. })));
    }

    #[test]
    fn value_mismatch_rejected() {
        let t = Transaction {
            id: 1,
            participants: vec![
                part(1, vec![comm(1, Direction::Send, 5)]),
                part(2, vec![comm(1, Direction::Recv, 6)]),
            ],
            matching: vec![pair(1, 5, 1, 0, 2, 0)],
        };
        assert_eq!(t.validate(), Err(TxnViolation::BadStep(0)));
    }

    #[test]
    fn crossed_order_is_cyclic() {
        // A: send a; recv b.   B: send b; recv a.  Each waits on the other.
        let t = Transaction {
            id: 1,
            participants: vec![
                part(1, vec![comm(1, Direction::Recv, 0), comm(2, Direction::Send, 0)]),
                part(2, vec![comm(2, Direction::Recv, 0), comm(1, Direction::Send, 0)]),
            ],
            matching: vec![pair(1, 0, 2, 1, 1, 0), pair(2, 0, 1, 1, 2, 0)],
        };
        assert_eq!(t.validate(), Err(TxnViolation::Cyclic));
    }

    #[test]
    fn duplicate_participant_rejected() {
        let t = Transaction {
            id: 1,
            participants: vec![part(1, vec![]), part(1, vec![])],
            matching: vec![],
        };
        assert_eq!(t.validate(), Err(TxnViolation::DuplicateParticipant(1)));
    }
}
