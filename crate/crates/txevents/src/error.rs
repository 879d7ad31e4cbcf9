use std::time::Duration;

/// Why a synchronization did not return a value.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SyncError {
    /// Raised by [`timeout_evt`](crate::timeout_evt) when its deadline passes
    /// before the wrapped event commits.
    #[error("timed out after {}s", .0.as_secs_f64())]
    TimedOut(Duration),
    /// An exception raised by a continuation (or a panic inside one).
    #[error("{0}")]
    Raised(String),
    /// The engine was stopped while the synchronization was still pending.
    #[error("engine shut down while the synchronization was pending")]
    Shutdown,
}

impl SyncError {
    /// Builds a user exception; return it from a continuation to abort the
    /// enclosing `sync`.
    pub fn raise(msg: impl Into<String>) -> Self {
        SyncError::Raised(msg.into())
    }

    /// Stable short label used in outcome classes.
    pub fn kind(&self) -> String {
        match self {
            SyncError::TimedOut(d) => format!("TimedOut({:?})", d.as_secs_f64()),
            SyncError::Raised(m) => format!("Raised({m})"),
            SyncError::Shutdown => "Shutdown".to_string(),
        }
    }
}

/// Unwind payload used to stop harness tasks at the end of a run. It must
/// pass through every `catch_unwind` in the crate untouched.
pub(crate) struct Teardown;

/// Converts a caught panic into a raised exception, re-raising harness
/// teardown.
pub(crate) fn panic_to_error(payload: Box<dyn std::any::Any + Send>) -> SyncError {
    if payload.is::<Teardown>() {
        std::panic::resume_unwind(payload);
    }
    let msg = payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "non-string panic".to_string());
    SyncError::Raised(format!("panic: {msg}"))
}
