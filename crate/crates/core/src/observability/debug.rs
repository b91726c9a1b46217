use std::fmt::Display;
use std::io::{IsTerminal, Write};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Weak};
use std::time::Duration;

use parking_lot::Mutex;

/// Debug lines of the form `[<iso-time>] <stage>: <detail>`.
pub struct DebugOutput {
    enabled: bool,
    sink: Arc<Mutex<Box<dyn Write + Send>>>,
    // flush after every line instead of leaving it to the flusher thread
    line_buffered: bool,
    lines: AtomicU64,
}

/// How long a buffered line may wait before it reaches a pipe or file.
pub const FLUSH_INTERVAL: Duration = Duration::from_millis(100);

impl std::fmt::Debug for DebugOutput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DebugOutput")
            .field("enabled", &self.enabled)
            .finish()
    }
}

impl DebugOutput {
    /// Line buffered on a terminal, block buffered otherwise with a
    /// background flush every [`FLUSH_INTERVAL`].
    pub fn stdout(enabled: bool) -> Self {
        let stdout = std::io::stdout();
        if !enabled || stdout.is_terminal() {
            return Self::to_writer(enabled, Box::new(stdout));
        }
        let mut out = Self::to_writer(enabled, Box::new(std::io::BufWriter::with_capacity(64 * 1024, stdout)));
        out.line_buffered = false;
        let weak = Arc::downgrade(&out.sink);
        let _ = std::thread::Builder::new()
            .name("debug-flush".into())
            .spawn(move || flush_loop(weak));
        out
    }

    pub fn disabled() -> Self {
        Self::to_writer(false, Box::new(std::io::sink()))
    }

    pub fn to_writer(enabled: bool, sink: Box<dyn Write + Send>) -> Self {
        Self {
            enabled,
            sink: Arc::new(Mutex::new(sink)),
            line_buffered: true,
            lines: AtomicU64::new(0),
        }
    }

    /// Writes into a shared buffer; used to inspect output in tests.
    pub fn capture() -> (Self, Arc<Mutex<Vec<u8>>>) {
        let buf = Arc::new(Mutex::new(Vec::new()));
        let out = Self::to_writer(true, Box::new(SharedBuf(buf.clone())));
        (out, buf)
    }

    #[inline]
    pub fn enabled(&self) -> bool {
        self.enabled
    }

    pub fn emit(&self, stage: &str, detail: impl Display) {
        if !self.enabled {
            return;
        }
        let line = format!("[{}] {stage}: {detail}\n", super::iso_now());
        let mut sink = self.sink.lock();
        let _ = sink.write_all(line.as_bytes());
        if self.line_buffered {
            let _ = sink.flush();
        }
        self.lines.fetch_add(1, Ordering::Relaxed);
    }

    /// Like [`emit`](Self::emit) but builds the detail only when enabled.
    #[inline]
    pub fn emit_with<D: Display>(&self, stage: &str, detail: impl FnOnce() -> D) {
        if self.enabled {
            self.emit(stage, detail());
        }
    }

    pub fn flush(&self) {
        let _ = self.sink.lock().flush();
    }

    pub fn lines_emitted(&self) -> u64 {
        self.lines.load(Ordering::Relaxed)
    }
}

impl Drop for DebugOutput {
    fn drop(&mut self) {
        let _ = self.sink.lock().flush();
    }
}

fn flush_loop(sink: Weak<Mutex<Box<dyn Write + Send>>>) {
    loop {
        std::thread::sleep(FLUSH_INTERVAL);
        let Some(sink) = sink.upgrade() else { return };
        let _ = sink.lock().flush();
    }
}

struct SharedBuf(Arc<Mutex<Vec<u8>>>);

impl Write for SharedBuf {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}
