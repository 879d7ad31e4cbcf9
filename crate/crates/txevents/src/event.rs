//! Channels and the event combinator tree.

use std::fmt;
use std::marker::PhantomData;
use std::panic::{self, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Duration;

use serde::Serialize;

use crate::context;
use crate::error::{panic_to_error, SyncError};
use crate::value::{Payload, Value};

/// Identity of a channel. Ids are handed out in creation order, so the
/// ordering doubles as a deterministic tie-breaker.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize)]
#[serde(transparent)]
pub struct ChannelId(pub u64);

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// An unbuffered synchronous channel carrying values of type `T`.
///
/// A channel is just an identity: values exist only inside committed
/// transactions, never in the channel itself.
pub struct Channel<T> {
    id: ChannelId,
    _payload: PhantomData<fn(T) -> T>,
}

impl<T> Channel<T> {
    pub fn id(&self) -> ChannelId {
        self.id
    }
}

impl<T> Clone for Channel<T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T> Copy for Channel<T> {}

impl<T> PartialEq for Channel<T> {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
    }
}

impl<T> Eq for Channel<T> {}

impl<T> fmt::Debug for Channel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Channel({})", self.id.0)
    }
}

impl<T: Payload> Channel<T> {
    pub fn send_evt(&self, v: T) -> Event<()> {
        send_evt(*self, v)
    }

    pub fn recv_evt(&self) -> Event<T> {
        recv_evt(*self)
    }
}

/// Creates a fresh channel.
///
/// Inside a harness run the id comes from the run's own counter, so runs are
/// reproducible; elsewhere it comes from a process-wide counter.
pub fn new_channel<T: Payload>() -> Channel<T> {
    Channel {
        id: context::next_channel_id(),
        _payload: PhantomData,
    }
}

pub(crate) type Cont = Arc<dyn Fn(&Value) -> Result<Arc<Node>, SyncError> + Send + Sync>;

/// The untyped event tree the engine and the oracle operate on.
pub(crate) enum Node {
    Always(Value),
    Never,
    Send(ChannelId, Value),
    Recv(ChannelId),
    Choose(Arc<Node>, Arc<Node>),
    Then(Arc<Node>, Cont),
    /// Completes with `()` once the duration has elapsed; see [`delay_evt`].
    Delay(Duration),
}

impl fmt::Debug for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Always(v) => write!(f, "Always({v:?})"),
            Node::Never => write!(f, "Never"),
            Node::Send(c, v) => write!(f, "Send({c}, {v:?})"),
            Node::Recv(c) => write!(f, "Recv({c})"),
            Node::Choose(l, r) => write!(f, "Choose({l:?}, {r:?})"),
            Node::Then(p, _) => write!(f, "Then({p:?}, <k>)"),
            Node::Delay(d) => write!(f, "Delay({d:?})"),
        }
    }
}

/// Runs a continuation, turning a panic into a raised exception.
pub(crate) fn invoke(k: &Cont, v: &Value) -> Result<Arc<Node>, SyncError> {
    panic::catch_unwind(AssertUnwindSafe(|| k(v))).unwrap_or_else(|p| Err(panic_to_error(p)))
}

/// An immutable description of a communication transaction producing a `T`.
///
/// Building an event has no effect; only [`sync`](crate::sync) performs it.
pub struct Event<T> {
    pub(crate) node: Arc<Node>,
    _result: PhantomData<fn() -> T>,
}

impl<T> Clone for Event<T> {
    fn clone(&self) -> Self {
        Event::from_node(self.node.clone())
    }
}

impl<T> fmt::Debug for Event<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.node.fmt(f)
    }
}

impl<T> Event<T> {
    pub(crate) fn from_node(node: Arc<Node>) -> Self {
        Event {
            node,
            _result: PhantomData,
        }
    }

    /// Drops the static result type; used by the harness, which treats all
    /// synchronizations uniformly.
    pub fn erase(&self) -> AnyEvent {
        AnyEvent {
            node: self.node.clone(),
        }
    }
}

impl<T: Payload> Event<T> {
    /// `then_evt(self, k)`.
    pub fn then<R, F>(self, k: F) -> Event<R::Output>
    where
        R: ContinuationOutput,
        F: Fn(T) -> R + Send + Sync + 'static,
    {
        then_evt(self, k)
    }

    /// `choose_evt(self, other)`.
    pub fn or(self, other: Event<T>) -> Event<T> {
        choose_evt(self, other)
    }
}

/// An event whose result type has been erased.
#[derive(Clone)]
pub struct AnyEvent {
    pub(crate) node: Arc<Node>,
}

impl fmt::Debug for AnyEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.node.fmt(f)
    }
}

/// What a `then_evt` continuation may return: the next event, or that event
/// wrapped in a `Result` whose `Err` aborts the whole synchronization.
pub trait ContinuationOutput {
    type Output: Payload;
    fn into_event(self) -> Result<Event<Self::Output>, SyncError>;
}

impl<T: Payload> ContinuationOutput for Event<T> {
    type Output = T;
    fn into_event(self) -> Result<Event<T>, SyncError> {
        Ok(self)
    }
}

impl<T: Payload> ContinuationOutput for Result<Event<T>, SyncError> {
    type Output = T;
    fn into_event(self) -> Result<Event<T>, SyncError> {
        self
    }
}

/// The event that succeeds immediately with `v`, communicating nothing.
pub fn always_evt<T: Payload>(v: T) -> Event<T> {
    Event::from_node(Arc::new(Node::Always(Value::new(v))))
}

/// The event that never succeeds. A branch reaching it is discarded.
pub fn never_evt<T: Payload>() -> Event<T> {
    Event::from_node(Arc::new(Node::Never))
}

/// Sends `v` on `c`. The value is captured now, at construction.
pub fn send_evt<T: Payload>(c: Channel<T>, v: T) -> Event<()> {
    Event::from_node(Arc::new(Node::Send(c.id, Value::new(v))))
}

pub fn recv_evt<T: Payload>(c: Channel<T>) -> Event<T> {
    Event::from_node(Arc::new(Node::Recv(c.id)))
}

/// Performs exactly one of `left` and `right`.
pub fn choose_evt<T: Payload>(left: Event<T>, right: Event<T>) -> Event<T> {
    Event::from_node(Arc::new(Node::Choose(left.node, right.node)))
}

/// Right-associated n-ary choice. An empty list is `never_evt()`.
pub fn choose_all<T: Payload>(events: impl IntoIterator<Item = Event<T>>) -> Event<T> {
    let mut events: Vec<_> = events.into_iter().collect();
    let Some(mut acc) = events.pop() else {
        return never_evt();
    };
    while let Some(e) = events.pop() {
        acc = choose_evt(e, acc);
    }
    acc
}

/// Transactional sequencing: synchronize on `e`, feed its result to `k`, then
/// synchronize on the event `k` returns, all within one transaction.
///
/// The engine may call `k` several times, including on branches that never
/// commit, so `k` must tolerate re-execution. Returning `Err` (or panicking)
/// aborts the enclosing `sync` with that error.
pub fn then_evt<U, R, F>(e: Event<U>, k: F) -> Event<R::Output>
where
    U: Payload,
    R: ContinuationOutput,
    F: Fn(U) -> R + Send + Sync + 'static,
{
    let cont: Cont = Arc::new(move |v: &Value| {
        let u = v
            .downcast::<U>()
            .expect("continuation received a payload of the wrong type");
        k(u).into_event().map(|ev| ev.node)
    });
    Event::from_node(Arc::new(Node::Then(e.node, cont)))
}

/// Completes with `()` after `d` has elapsed (virtual time inside the
/// harness, wall-clock time otherwise).
///
/// This is the engine-visible form of sleeping inside a continuation: a
/// branch waiting on a delay never holds up matching of other branches. Only
/// delays reached before the synchronization's first communication are armed;
/// a delay that follows a communication in the same transaction never fires.
pub fn delay_evt(d: Duration) -> Event<()> {
    Event::from_node(Arc::new(Node::Delay(d)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channels_are_fresh_and_ordered() {
        let a = new_channel::<i64>();
        let b = new_channel::<i64>();
        assert_ne!(a.id(), b.id());
        assert!(a.id() < b.id());
    }

    #[test]
    fn send_copies_at_construction() {
        let c = new_channel::<Vec<i64>>();
        let mut v = vec![1, 2];
        let e = send_evt(c, v.clone());
        v.push(3);
        match &*e.node {
            Node::Send(_, val) => assert_eq!(val.downcast::<Vec<i64>>(), Some(vec![1, 2])),
            other => panic!("unexpected node {other:?}"),
        }
    }

    #[test]
    fn choose_all_folds_right() {
        let e = choose_all(vec![always_evt(1), always_evt(2), always_evt(3)]);
        assert_eq!(format!("{e:?}"), "Choose(Always(1), Choose(Always(2), Always(3)))");
        assert_eq!(format!("{:?}", choose_all(Vec::<Event<i64>>::new())), "Never");
    }

    #[test]
    fn continuation_panic_becomes_raise() {
        let e = then_evt(always_evt(1i64), |_: i64| -> Event<i64> { panic!("boom") });
        let Node::Then(_, k) = &*e.node else { unreachable!() };
        let r = invoke(k, &Value::new(1i64));
        assert_eq!(r.unwrap_err(), SyncError::Raised("panic: boom".into()));
    }
}
