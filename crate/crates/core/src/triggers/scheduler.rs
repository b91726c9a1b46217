use std::sync::mpsc;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde_json::Value;

use super::cron::CronSpec;
use super::{Dispatch, Trigger};

#[derive(Clone, Debug)]
pub struct CronJob {
    pub spec: CronSpec,
    pub target: String,
    pub event: Value,
}

#[derive(Debug)]
struct Entry {
    id: u64,
    job: CronJob,
    next: Option<DateTime<Utc>>,
}

/// Cron jobs driven by an external clock. Each due job fires once per
/// tick, however many of its minutes were missed.
#[derive(Debug, Default)]
pub struct Scheduler {
    entries: Vec<Entry>,
    next_id: u64,
}

impl Scheduler {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a job whose first fire is after `now`.
    pub fn add(&mut self, job: CronJob, now: DateTime<Utc>) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        let next = self.schedule(&job, now);
        self.entries.push(Entry { id, job, next });
        id
    }

    pub fn remove(&mut self, id: u64) -> bool {
        let before = self.entries.len();
        self.entries.retain(|e| e.id != id);
        self.entries.len() != before
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn schedule(&self, job: &CronJob, after: DateTime<Utc>) -> Option<DateTime<Utc>> {
        match job.spec.next_after(after) {
            Ok(t) => Some(t),
            Err(e) => {
                tracing::warn!("cron job for {}: {e}", job.target);
                None
            }
        }
    }

    /// Jobs due at `now`, each rescheduled after `now`.
    pub fn tick(&mut self, now: DateTime<Utc>) -> Vec<CronJob> {
        let mut due = Vec::new();
        for i in 0..self.entries.len() {
            if self.entries[i].next.is_some_and(|t| t <= now) {
                let next = self.schedule(&self.entries[i].job, now);
                self.entries[i].next = next;
                due.push(self.entries[i].job.clone());
            }
        }
        due
    }

    /// Earliest pending fire time.
    pub fn next_due(&self) -> Option<DateTime<Utc>> {
        self.entries.iter().filter_map(|e| e.next).min()
    }
}

/// Runs a [`Scheduler`] against the wall clock on a background thread.
pub struct CronTrigger {
    scheduler: Arc<Mutex<Scheduler>>,
    stop: Option<mpsc::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl CronTrigger {
    pub fn start(jobs: Vec<CronJob>, dispatch: Dispatch) -> Self {
        let now = Utc::now();
        let mut s = Scheduler::new();
        for job in jobs {
            s.add(job, now);
        }
        let scheduler = Arc::new(Mutex::new(s));
        let (tx, rx) = mpsc::channel::<()>();
        let sched = scheduler.clone();
        let thread = std::thread::Builder::new()
            .name("cron".into())
            .spawn(move || loop {
                let now = Utc::now();
                let due = sched.lock().tick(now);
                for job in due {
                    let d = dispatch.clone();
                    std::thread::spawn(move || {
                        let r = d(&job.target, job.event);
                        if !r.is_ok() {
                            tracing::warn!("cron invocation of {} failed: {}", job.target, r.message());
                        }
                    });
                }
                let wait = sched
                    .lock()
                    .next_due()
                    .and_then(|t| (t - Utc::now()).to_std().ok())
                    .unwrap_or(Duration::from_secs(1))
                    .clamp(Duration::from_millis(50), Duration::from_secs(1));
                match rx.recv_timeout(wait) {
                    Err(mpsc::RecvTimeoutError::Timeout) => {}
                    _ => break,
                }
            })
            .expect("spawn cron thread");
        Self {
            scheduler,
            stop: Some(tx),
            thread: Some(thread),
        }
    }

    pub fn scheduler(&self) -> &Arc<Mutex<Scheduler>> {
        &self.scheduler
    }
}

impl Trigger for CronTrigger {
    fn name(&self) -> &str {
        "cron"
    }

    fn stop(&mut self) {
        self.stop.take();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for CronTrigger {
    fn drop(&mut self) {
        Trigger::stop(self);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use serde_json::json;

    fn job(spec: &str, target: &str) -> CronJob {
        CronJob {
            spec: CronSpec::parse(spec).unwrap(),
            target: target.into(),
            event: json!({}),
        }
    }

    fn at(h: u32, m: u32, s: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 5, 1, h, m, s).unwrap()
    }

    #[test]
    fn every_minute_over_three_simulated_minutes() {
        let mut s = Scheduler::new();
        s.add(job("* * * * *", "f"), at(12, 0, 0));
        let mut fired = 0;
        let mut t = at(12, 0, 0);
        while t <= at(12, 3, 0) {
            fired += s.tick(t).len();
            t += chrono::Duration::seconds(10);
        }
        assert_eq!(fired, 3);
    }

    #[test]
    fn missed_minutes_fire_once() {
        let mut s = Scheduler::new();
        s.add(job("* * * * *", "f"), at(12, 0, 0));
        assert_eq!(s.tick(at(12, 30, 5)).len(), 1);
        assert_eq!(s.tick(at(12, 30, 30)).len(), 0);
        assert_eq!(s.tick(at(12, 31, 0)).len(), 1);
    }

    #[test]
    fn two_jobs_same_minute_and_removal() {
        let mut s = Scheduler::new();
        let a = s.add(job("5 * * * *", "a"), at(12, 0, 0));
        s.add(job("5 12 * * *", "b"), at(12, 0, 0));
        let mut names: Vec<_> = s.tick(at(12, 5, 0)).into_iter().map(|j| j.target).collect();
        names.sort();
        assert_eq!(names, ["a", "b"]);
        assert!(s.remove(a));
        assert!(s.tick(at(13, 5, 0)).is_empty());
        assert_eq!(s.len(), 1);
    }
}
