//! Type-erased payloads.
//!
//! Events are typed at the API surface (`Event<T>`, `Channel<T>`) but the
//! engine works on a single untyped tree, so every payload crossing a channel
//! or flowing into a continuation is carried as a [`Value`].

use std::any::Any;
use std::fmt;
use std::sync::Arc;

/// Anything that can travel over a channel or be the result of an event.
///
/// Payloads are duplicated freely during speculative search and compared
/// when classifying outcomes, hence `Clone + PartialEq + Debug`.
pub trait Payload: Clone + PartialEq + fmt::Debug + Send + Sync + 'static {}

impl<T> Payload for T where T: Clone + PartialEq + fmt::Debug + Send + Sync + 'static {}

trait ErasedPayload: Send + Sync {
    fn as_any(&self) -> &dyn Any;
    fn eq_dyn(&self, other: &dyn ErasedPayload) -> bool;
    fn fmt_dyn(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result;
}

impl<T: Payload> ErasedPayload for T {
    fn as_any(&self) -> &dyn Any {
        self
    }

    fn eq_dyn(&self, other: &dyn ErasedPayload) -> bool {
        other.as_any().downcast_ref::<T>() == Some(self)
    }

    fn fmt_dyn(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// An immutable, cheaply clonable, type-erased payload.
#[derive(Clone)]
pub struct Value(Arc<dyn ErasedPayload>);

impl Value {
    pub fn new<T: Payload>(v: T) -> Self {
        Value(Arc::new(v))
    }

    pub fn unit() -> Self {
        Value::new(())
    }

    /// Clones the payload out if it has type `T`.
    pub fn downcast<T: Payload>(&self) -> Option<T> {
        self.0.as_any().downcast_ref::<T>().cloned()
    }

    /// `Debug` rendering used by traces and outcome classes.
    pub fn render(&self) -> String {
        format!("{self:?}")
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || self.0.eq_dyn(other.0.as_ref())
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt_dyn(f)
    }
}
