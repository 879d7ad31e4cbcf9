//! Observable engine events.

use std::fmt;
use std::io::Write;
use std::sync::{Arc, Mutex};

use serde::Serialize;

use super::SyncId;
use crate::event::ChannelId;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceKind {
    Offer,
    TentativeMatch,
    Commit,
    Prune,
    Abort,
    Exception,
    TimerSet,
    TimerFire,
}

impl TraceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceKind::Offer => "offer",
            TraceKind::TentativeMatch => "tentative-match",
            TraceKind::Commit => "commit",
            TraceKind::Prune => "prune",
            TraceKind::Abort => "abort",
            TraceKind::Exception => "exception",
            TraceKind::TimerSet => "timer-set",
            TraceKind::TimerFire => "timer-fire",
        }
    }
}

/// One line of the trace stream. Serializes to the JSON-lines schema
/// `{"seq","sync","kind","channel","value","txn"}` in that field order.
#[derive(Clone, PartialEq, Eq, Debug, Serialize)]
pub struct TraceRecord {
    pub seq: u64,
    pub sync: SyncId,
    pub kind: TraceKind,
    pub channel: Option<ChannelId>,
    pub value: Option<String>,
    pub txn: Option<u64>,
}

impl TraceRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trace records always serialize")
    }
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{:<4} sync={:<3} {:<15}", self.seq, self.sync.0, self.kind.as_str())?;
        if let Some(c) = self.channel {
            write!(f, " ch={c}")?;
        }
        if let Some(v) = &self.value {
            write!(f, " value={v}")?;
        }
        if let Some(t) = self.txn {
            write!(f, " txn={t}")?;
        }
        Ok(())
    }
}

/// Receives trace records as the engine produces them.
pub trait TraceSink: Send + Sync {
    fn record(&self, rec: &TraceRecord);
}

/// Collects records in memory.
#[derive(Default)]
pub struct VecSink(Mutex<Vec<TraceRecord>>);

impl VecSink {
    pub fn records(&self) -> Vec<TraceRecord> {
        self.0.lock().unwrap().clone()
    }
}

impl TraceSink for VecSink {
    fn record(&self, rec: &TraceRecord) {
        self.0.lock().unwrap().push(rec.clone());
    }
}

/// Writes one JSON object per line.
pub struct JsonLinesSink<W: Write + Send>(Mutex<W>);

impl<W: Write + Send> JsonLinesSink<W> {
    pub fn new(w: W) -> Self {
        JsonLinesSink(Mutex::new(w))
    }

    pub fn into_inner(self) -> W {
        self.0.into_inner().unwrap()
    }
}

impl<W: Write + Send> TraceSink for JsonLinesSink<W> {
    fn record(&self, rec: &TraceRecord) {
        let mut w = self.0.lock().unwrap();
        // A broken pipe on a trace stream is not worth failing a sync over.
        let _ = writeln!(w, "{}", rec.to_json());
    }
}

pub(crate) struct TraceLog {
    seq: u64,
    keep: bool,
    records: Vec<TraceRecord>,
    sink: Option<Arc<dyn TraceSink>>,
}

impl TraceLog {
    pub(crate) fn new(keep: bool, sink: Option<Arc<dyn TraceSink>>) -> Self {
        TraceLog {
            seq: 0,
            keep,
            records: Vec::new(),
            sink,
        }
    }

    pub(crate) fn push(
        &mut self,
        sync: SyncId,
        kind: TraceKind,
        channel: Option<ChannelId>,
        value: Option<String>,
        txn: Option<u64>,
    ) {
        self.seq += 1;
        let rec = TraceRecord {
            seq: self.seq,
            sync,
            kind,
            channel,
            value,
            txn,
        };
        if let Some(sink) = &self.sink {
            sink.record(&rec);
        }
        if self.keep {
            self.records.push(rec);
        }
    }

    pub(crate) fn records(&self) -> &[TraceRecord] {
        &self.records
    }
}
