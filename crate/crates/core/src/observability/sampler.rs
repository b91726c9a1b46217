use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::Serialize;

use crate::error::Result;

pub const SAMPLE_HEADER: [&str; 3] = ["sample_time", "open_count", "unread_response_count"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConnectionStat {
    pub sample_time: String,
    pub open_count: usize,
    pub unread_response_count: usize,
}

/// Samples `(open, unread)` connection counts at a fixed interval.
pub struct ConnSampler {
    samples: Arc<Mutex<Vec<ConnectionStat>>>,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ConnSampler {
    pub fn start<F>(interval: Duration, probe: F) -> Self
    where
        F: Fn() -> (usize, usize) + Send + 'static,
    {
        let samples = Arc::new(Mutex::new(Vec::new()));
        let stop = Arc::new(AtomicBool::new(false));
        let (s, st) = (samples.clone(), stop.clone());
        let thread = std::thread::spawn(move || {
            let mut last: Option<DateTime<Utc>> = None;
            while !st.load(Ordering::Relaxed) {
                let (open, unread) = probe();
                let mut now = Utc::now();
                // millisecond resolution must still be strictly increasing
                if let Some(prev) = last {
                    if now <= prev + chrono::Duration::milliseconds(1) {
                        now = prev + chrono::Duration::milliseconds(1);
                    }
                }
                last = Some(now);
                s.lock().push(ConnectionStat {
                    sample_time: super::iso(now),
                    open_count: open,
                    unread_response_count: unread.min(open),
                });
                std::thread::sleep(interval);
            }
        });
        Self {
            samples,
            stop,
            thread: Some(thread),
        }
    }

    pub fn samples(&self) -> Vec<ConnectionStat> {
        self.samples.lock().clone()
    }

    pub fn peak_open(&self) -> usize {
        self.samples
            .lock()
            .iter()
            .map(|s| s.open_count)
            .max()
            .unwrap_or(0)
    }

    pub fn stop(mut self) -> Vec<ConnectionStat> {
        self.halt();
        self.samples()
    }

    fn halt(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    pub fn write_csv(samples: &[ConnectionStat], path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(std::io::Error::from)?;
        for s in samples {
            w.serialize(s).map_err(std::io::Error::from)?;
        }
        w.flush()?;
        if samples.is_empty() {
            drop(w);
            let mut w = csv::Writer::from_path(path).map_err(std::io::Error::from)?;
            w.write_record(SAMPLE_HEADER).map_err(std::io::Error::from)?;
            w.flush()?;
        }
        Ok(())
    }
}

impl Drop for ConnSampler {
    fn drop(&mut self) {
        self.halt();
    }
}
