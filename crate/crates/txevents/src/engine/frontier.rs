//! Branch expansion.
//!
//! A synchronization's live branches are kept together as a [`Frontier`]:
//! every way its event can be unfolded without communicating, each stopped
//! at a `Done` value, a pending send/receive offer, or an armed delay.
//! Choices are resolved lazily; the branch actually taken is fixed only when
//! one of its offers is matched or its value is committed.

use std::sync::Arc;
use std::time::Duration;

use super::txn::{BranchPath, Direction, Side, Step};
use crate::error::SyncError;
use crate::event::{invoke, ChannelId, Cont, Node};
use crate::value::Value;

pub(crate) type Stack = Option<Arc<Frame>>;

pub(crate) struct Frame {
    k: Cont,
    next: Stack,
}

/// Persistent, shareable step list.
#[derive(Clone, Default)]
pub(crate) struct Path(Option<Arc<PathCell>>);

struct PathCell {
    step: Step,
    len: usize,
    prev: Path,
}

impl Path {
    pub(crate) fn len(&self) -> usize {
        self.0.as_ref().map_or(0, |c| c.len)
    }

    pub(crate) fn push(&self, step: Step) -> Path {
        Path(Some(Arc::new(PathCell {
            step,
            len: self.len() + 1,
            prev: self.clone(),
        })))
    }

    pub(crate) fn to_branch_path(&self) -> BranchPath {
        let mut steps = Vec::with_capacity(self.len());
        let mut cur = &self.0;
        while let Some(cell) = cur {
            steps.push(cell.step.clone());
            cur = &cell.prev.0;
        }
        steps.reverse();
        BranchPath { steps }
    }
}

pub(crate) enum AltKind {
    Done(Value),
    Send {
        channel: ChannelId,
        value: Value,
        stack: Stack,
    },
    Recv {
        channel: ChannelId,
        stack: Stack,
    },
    Sleep {
        after: Duration,
        stack: Stack,
    },
}

pub(crate) struct Alt {
    pub id: u64,
    pub kind: AltKind,
    pub path: Path,
}

impl Alt {
    pub(crate) fn is_done(&self) -> bool {
        matches!(self.kind, AltKind::Done(_))
    }
}

#[derive(Default)]
pub(crate) struct Frontier {
    pub id: u64,
    pub alts: Vec<Arc<Alt>>,
    /// Branches that reached `Never` (or a delay after a communication).
    pub pruned: usize,
    /// Set when the branch bound cut the expansion short.
    pub truncated: bool,
}

impl Frontier {
    pub(crate) fn has_done(&self) -> bool {
        self.alts.iter().any(|a| a.is_done())
    }
}

/// Expands event trees into frontiers, allocating ids from a shared counter.
pub(crate) struct Expander<'a> {
    pub next_id: &'a mut u64,
    pub max_alts: usize,
    /// Delays before the first communication are armed; later ones prune.
    pub allow_sleep: bool,
}

impl Expander<'_> {
    fn fresh(&mut self) -> u64 {
        *self.next_id += 1;
        *self.next_id
    }

    pub(crate) fn root(&mut self, node: &Arc<Node>) -> Result<Frontier, SyncError> {
        let mut out = self.empty();
        let mut calls = 0;
        self.expand(node, None, Path::default(), &mut out, &mut calls)?;
        Ok(out)
    }

    /// Continues a branch after a communication (or a fired delay) that
    /// produced `v`.
    pub(crate) fn resume(&mut self, stack: &Stack, v: Value, path: Path) -> Result<Frontier, SyncError> {
        let mut out = self.empty();
        let mut calls = 0;
        self.complete(v, stack.clone(), path, &mut out, &mut calls)?;
        Ok(out)
    }

    /// The successor frontier of an offer that has been matched.
    pub(crate) fn after_comm(&mut self, alt: &Alt, received: Option<Value>) -> Result<Frontier, SyncError> {
        match (&alt.kind, received) {
            (AltKind::Send { channel, value, stack }, None) => {
                let path = alt.path.push(Step::Comm {
                    channel: *channel,
                    direction: Direction::Send,
                    value: value.clone(),
                });
                self.resume(stack, Value::unit(), path)
            }
            (AltKind::Recv { channel, stack }, Some(v)) => {
                let path = alt.path.push(Step::Comm {
                    channel: *channel,
                    direction: Direction::Recv,
                    value: v.clone(),
                });
                self.resume(stack, v, path)
            }
            _ => unreachable!("after_comm called on a branch that is not a matching offer"),
        }
    }

    fn empty(&mut self) -> Frontier {
        Frontier {
            id: self.fresh(),
            ..Frontier::default()
        }
    }

    fn push(&mut self, out: &mut Frontier, kind: AltKind, path: Path) {
        if out.alts.len() >= self.max_alts {
            out.truncated = true;
            return;
        }
        let id = self.fresh();
        out.alts.push(Arc::new(Alt { id, kind, path }));
    }

    fn complete(
        &mut self,
        v: Value,
        stack: Stack,
        path: Path,
        out: &mut Frontier,
        calls: &mut usize,
    ) -> Result<(), SyncError> {
        match stack {
            None => {
                self.push(out, AltKind::Done(v), path);
                Ok(())
            }
            Some(frame) => {
                *calls += 1;
                if *calls > self.max_alts {
                    out.truncated = true;
                    return Ok(());
                }
                let next = invoke(&frame.k, &v)?;
                let path = path.push(Step::ContinuationEntered);
                self.expand(&next, frame.next.clone(), path, out, calls)
            }
        }
    }

    fn expand(
        &mut self,
        node: &Arc<Node>,
        stack: Stack,
        path: Path,
        out: &mut Frontier,
        calls: &mut usize,
    ) -> Result<(), SyncError> {
        match &**node {
            Node::Always(v) => self.complete(v.clone(), stack, path, out, calls),
            Node::Never => {
                out.pruned += 1;
                Ok(())
            }
            Node::Send(channel, value) => {
                let kind = AltKind::Send {
                    channel: *channel,
                    value: value.clone(),
                    stack,
                };
                self.push(out, kind, path);
                Ok(())
            }
            Node::Recv(channel) => {
                self.push(
                    out,
                    AltKind::Recv {
                        channel: *channel,
                        stack,
                    },
                    path,
                );
                Ok(())
            }
            Node::Choose(l, r) => {
                self.expand(l, stack.clone(), path.push(Step::ChoiceTaken(Side::Left)), out, calls)?;
                self.expand(r, stack, path.push(Step::ChoiceTaken(Side::Right)), out, calls)
            }
            Node::Then(prefix, k) => {
                let frame = Arc::new(Frame {
                    k: k.clone(),
                    next: stack,
                });
                self.expand(prefix, Some(frame), path, out, calls)
            }
            Node::Delay(after) => {
                if self.allow_sleep {
                    self.push(out, AltKind::Sleep { after: *after, stack }, path);
                } else {
                    out.pruned += 1;
                }
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};

    use super::*;
    use crate::event::*;

    fn expander(next: &mut u64) -> Expander<'_> {
        Expander {
            next_id: next,
            max_alts: 64,
            allow_sleep: true,
        }
    }

    #[test]
    fn never_is_pruned_without_offers() {
        let mut n = 0;
        let f = expander(&mut n).root(&never_evt::<i64>().node).unwrap();
        assert!(f.alts.is_empty());
        assert_eq!(f.pruned, 1);
    }

    #[test]
    fn choose_yields_two_successors() {
        let c = new_channel::<i64>();
        let e = choose_evt(recv_evt(c), always_evt(3));
        let mut n = 0;
        let f = expander(&mut n).root(&e.node).unwrap();
        assert_eq!(f.alts.len(), 2);
        assert!(matches!(f.alts[0].kind, AltKind::Recv { .. }));
        assert!(f.alts[1].is_done());
        let p = f.alts[1].path.to_branch_path();
        assert_eq!(p.steps, vec![Step::ChoiceTaken(Side::Right)]);
    }

    #[test]
    fn then_on_recv_defers_continuation() {
        let calls = Arc::new(AtomicUsize::new(0));
        let seen = calls.clone();
        let c = new_channel::<i64>();
        let e = then_evt(recv_evt(c), move |x: i64| {
            seen.fetch_add(1, Ordering::SeqCst);
            always_evt(x + 1)
        });
        let mut n = 0;
        let mut ex = expander(&mut n);
        let f = ex.root(&e.node).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 0);
        assert_eq!(f.alts.len(), 1);

        let next = ex.after_comm(&f.alts[0], Some(Value::new(4i64))).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        match &next.alts[0].kind {
            AltKind::Done(v) => assert_eq!(v.downcast::<i64>(), Some(5)),
            _ => panic!("expected a completed branch"),
        }
        let steps = next.alts[0].path.to_branch_path().steps;
        assert_eq!(steps.len(), 2);
        assert!(matches!(steps[1], Step::ContinuationEntered));
    }

    #[test]
    fn always_prefix_runs_continuation_immediately() {
        let e = then_evt(always_evt(()), |()| always_evt(9i64));
        let mut n = 0;
        let f = expander(&mut n).root(&e.node).unwrap();
        assert!(f.has_done());
    }

    #[test]
    fn raise_propagates() {
        let e = then_evt(always_evt(()), |()| -> Result<Event<i64>, SyncError> {
            Err(SyncError::raise("no"))
        });
        let mut n = 0;
        assert_eq!(expander(&mut n).root(&e.node).err(), Some(SyncError::raise("no")));
    }

    #[test]
    fn unbounded_unrolling_is_truncated() {
        fn spin() -> Event<i64> {
            choose_evt(always_evt(0), then_evt(always_evt(()), |()| spin()))
        }
        let mut n = 0;
        let f = Expander {
            next_id: &mut n,
            max_alts: 8,
            allow_sleep: true,
        }
        .root(&spin().node)
        .unwrap();
        assert!(f.truncated);
        assert!(f.alts.len() <= 8);
    }

    #[test]
    fn delay_after_comm_is_pruned() {
        let c = new_channel::<i64>();
        let e = then_evt(recv_evt(c), |_: i64| delay_evt(Duration::from_secs(1)));
        let mut n = 0;
        let mut ex = expander(&mut n);
        let f = ex.root(&e.node).unwrap();
        ex.allow_sleep = false;
        let next = ex.after_comm(&f.alts[0], Some(Value::new(1i64))).unwrap();
        assert!(next.alts.is_empty());
        assert_eq!(next.pruned, 1);
    }
}
