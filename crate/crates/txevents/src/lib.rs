//! Transactional events: composable communication events over synchronous
//! channels, synchronized all-or-nothing.
//!
//! An [`Event`] describes communications and what to do with their results.
//! [`sync`] performs it: the engine looks for a set of pending
//! synchronizations, across any number of threads, whose sends and receives
//! can all be matched so that every one of them completes. Either all of
//! them commit together or none does. [`then_evt`] sequences events inside
//! one transaction, [`choose_evt`] offers alternatives.
//!
//! ```
//! use txevents::{always_evt, new_channel, recv_evt, send_evt, spawn, sync, then_evt, Runtime, EngineConfig};
//!
//! let rt = Runtime::new(EngineConfig::default());
//! let sum = rt.enter(|| {
//!     let c = new_channel::<i64>();
//!     spawn(move || {
//!         sync(then_evt(send_evt(c, 1), move |()| send_evt(c, 2)))
//!     });
//!     // Both receives commit in the same transaction as both sends.
//!     sync(then_evt(recv_evt(c), move |x: i64| {
//!         then_evt(recv_evt(c), move |y: i64| always_evt(x + y))
//!     }))
//! });
//! assert_eq!(sum, Ok(3));
//! ```
//!
//! [`harness`] runs the same code under a deterministic scheduler and checks
//! it against a brute-force reference.

mod combinators;
mod context;
pub mod engine;
mod error;
mod event;
pub mod harness;
pub mod patterns;
mod runtime;
mod value;

#[doc(hidden)]
pub mod cli;

pub use combinators::{
    evt_loop, guarded_recv_evt, n_way_rendezvous_evt, rewrap, server_loop, sync_thunked, thunk_wrap, timeout_evt,
    try_thunk_wrap, RendezvousRole, Thunk,
};
pub use context::{now, sleep, spawn, spawn_named, sync};
pub use engine::{Coordinator, EngineConfig, SyncId, TraceKind, TraceRecord, Transaction};
pub use error::SyncError;
pub use event::{
    always_evt, choose_all, choose_evt, delay_evt, never_evt, new_channel, recv_evt, send_evt, then_evt, AnyEvent,
    Channel, ChannelId, ContinuationOutput, Event,
};
pub use runtime::Runtime;
pub use value::{Payload, Value};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    struct Intro;
    #[doc = include_str!("../../../book/src/events.md")]
    struct Events;
    #[doc = include_str!("../../../book/src/servers.md")]
    struct Servers;
    #[doc = include_str!("../../../book/src/wrappers.md")]
    struct Wrappers;
    #[doc = include_str!("../../../book/src/locks.md")]
    struct Locks;
    #[doc = include_str!("../../../book/src/harness.md")]
    struct Harness;
}
