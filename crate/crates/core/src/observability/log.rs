use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, SyncSender, TrySendError};
use std::sync::Arc;
use std::thread::JoinHandle;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::execution::InvocationStatus;

pub const CSV_HEADER: [&str; 7] = [
    "timestamp",
    "request_id",
    "tenant",
    "function",
    "executor",
    "duration_ms",
    "status",
];

const QUEUE_CAPACITY: usize = 10_000;

/// One logged execution. Field order is the CSV column order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvocationRecord {
    pub timestamp: String,
    pub request_id: String,
    pub tenant: String,
    pub function: String,
    pub executor: String,
    pub duration_ms: f64,
    pub status: InvocationStatus,
}

impl InvocationRecord {
    pub fn now(
        request_id: &str,
        tenant: &str,
        function: &str,
        executor: &str,
        duration_ms: f64,
        status: InvocationStatus,
    ) -> Self {
        Self {
            timestamp: super::iso_now(),
            request_id: request_id.to_string(),
            tenant: tenant.to_string(),
            function: function.to_string(),
            executor: executor.to_string(),
            duration_ms: duration_ms.max(0.0),
            status,
        }
    }
}

enum Msg {
    Record(InvocationRecord),
    Flush(SyncSender<()>),
}

#[derive(Debug, Default)]
struct Counters {
    written: AtomicU64,
    dropped: AtomicU64,
    failed: AtomicU64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LogStats {
    pub written: u64,
    pub dropped: u64,
    pub failed: u64,
}

/// Appends invocation records to a CSV file from a single writer thread.
///
/// Producers never block: when the queue is full the record is dropped and
/// counted.
pub struct CsvLogger {
    path: PathBuf,
    tx: Mutex<Option<SyncSender<Msg>>>,
    counters: Arc<Counters>,
    thread: Mutex<Option<JoinHandle<()>>>,
}

impl std::fmt::Debug for CsvLogger {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CsvLogger").field("path", &self.path).finish()
    }
}

impl CsvLogger {
    /// Opens `path` for appending, writing the header if the file is new or
    /// empty.
    pub fn open(path: &Path) -> Result<Self> {
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        if file.metadata()?.len() == 0 {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(CSV_HEADER).map_err(std::io::Error::from)?;
            file.write_all(&w.into_inner().map_err(|e| e.into_error())?)?;
        }
        let (tx, rx) = mpsc::sync_channel(QUEUE_CAPACITY);
        let counters = Arc::new(Counters::default());
        let c = counters.clone();
        let thread = std::thread::Builder::new()
            .name("csv-logger".into())
            .spawn(move || writer_loop(file, rx, &c))?;
        Ok(Self {
            path: path.to_path_buf(),
            tx: Mutex::new(Some(tx)),
            counters,
            thread: Mutex::new(Some(thread)),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn log(&self, record: InvocationRecord) {
        let tx = self.tx.lock().clone();
        let Some(tx) = tx else {
            self.counters.failed.fetch_add(1, Ordering::Relaxed);
            return;
        };
        match tx.try_send(Msg::Record(record)) {
            Ok(()) => {}
            Err(TrySendError::Full(_)) => {
                self.counters.dropped.fetch_add(1, Ordering::Relaxed);
            }
            Err(TrySendError::Disconnected(_)) => {
                self.counters.failed.fetch_add(1, Ordering::Relaxed);
            }
        }
    }

    /// Blocks until every record queued before this call is on disk.
    pub fn flush(&self) {
        let tx = self.tx.lock().clone();
        if let Some(tx) = tx {
            let (ack_tx, ack_rx) = mpsc::sync_channel(1);
            if tx.send(Msg::Flush(ack_tx)).is_ok() {
                let _ = ack_rx.recv();
            }
        }
    }

    pub fn stats(&self) -> LogStats {
        LogStats {
            written: self.counters.written.load(Ordering::Relaxed),
            dropped: self.counters.dropped.load(Ordering::Relaxed),
            failed: self.counters.failed.load(Ordering::Relaxed),
        }
    }

    /// Drains the queue, stops the writer and reports losses.
    pub fn shutdown(&self) -> LogStats {
        self.tx.lock().take();
        if let Some(t) = self.thread.lock().take() {
            let _ = t.join();
        }
        let stats = self.stats();
        if stats.dropped > 0 || stats.failed > 0 {
            tracing::warn!(
                "invocation log {}: {} rows dropped, {} failed writes",
                self.path.display(),
                stats.dropped,
                stats.failed
            );
        }
        stats
    }
}

impl Drop for CsvLogger {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn writer_loop(mut file: File, rx: Receiver<Msg>, counters: &Counters) {
    let mut acks = Vec::new();
    while let Ok(first) = rx.recv() {
        let mut batch = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(Vec::new());
        let mut rows = 0u64;
        let mut next = Some(first);
        while let Some(msg) = next {
            match msg {
                Msg::Record(r) => match batch.serialize(&r) {
                    Ok(()) => rows += 1,
                    Err(_) => {
                        counters.failed.fetch_add(1, Ordering::Relaxed);
                    }
                },
                Msg::Flush(ack) => acks.push(ack),
            }
            next = rx.try_recv().ok();
        }
        let bytes = batch.into_inner().unwrap_or_default();
        if file.write_all(&bytes).is_ok() {
            counters.written.fetch_add(rows, Ordering::Relaxed);
        } else {
            counters.failed.fetch_add(rows, Ordering::Relaxed);
        }
        for ack in acks.drain(..) {
            let _ = ack.send(());
        }
    }
}

/// Reads every record of a log file.
pub fn read_records(path: &Path) -> Result<Vec<InvocationRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(std::io::Error::from)?;
    let mut out = Vec::new();
    for row in reader.deserialize() {
        out.push(row.map_err(std::io::Error::from)?);
    }
    Ok(out)
}
