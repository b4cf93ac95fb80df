//! Speculative grounding of upcoming steps on a background thread.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use super::env::Observation;
use crate::grounding::Grounding;

/// Grounds step `idx` against an observation.
pub type Handler = dyn Fn(usize, &Observation) -> Result<Grounding, String> + Send + Sync;

struct Job {
    idx: usize,
    obs: Arc<Observation>,
}

struct Done {
    idx: usize,
    fingerprint: u64,
    result: Result<Grounding, String>,
}

/// Published result for one step index.
#[derive(Debug, Clone)]
pub struct CachedResult {
    pub fingerprint: u64,
    pub result: Result<Grounding, String>,
}

pub struct PrecheckPipeline {
    jobs: Option<Sender<Job>>,
    results: Receiver<Done>,
    worker: Option<JoinHandle<()>>,
    cache: HashMap<usize, CachedResult>,
    pending: usize,
}

impl PrecheckPipeline {
    pub fn start(handler: Arc<Handler>) -> Self {
        let (job_tx, job_rx) = channel::<Job>();
        let (done_tx, done_rx) = channel::<Done>();
        let worker = std::thread::spawn(move || {
            for job in job_rx {
                let result = catch_unwind(AssertUnwindSafe(|| handler(job.idx, &job.obs)))
                    .unwrap_or_else(|_| Err(format!("precheck handler panicked on step index {}", job.idx)));
                let done = Done {
                    idx: job.idx,
                    fingerprint: job.obs.fingerprint(),
                    result,
                };
                if done_tx.send(done).is_err() {
                    break;
                }
            }
        });
        Self {
            jobs: Some(job_tx),
            results: done_rx,
            worker: Some(worker),
            cache: HashMap::new(),
            pending: 0,
        }
    }

    /// Queue step `idx` for grounding against `obs`.
    pub fn submit(&mut self, idx: usize, obs: Arc<Observation>) {
        if let Some(tx) = &self.jobs {
            if tx.send(Job { idx, obs }).is_ok() {
                self.pending += 1;
            }
        }
    }

    fn publish(&mut self, d: Done) {
        self.pending -= 1;
        self.cache.insert(
            d.idx,
            CachedResult {
                fingerprint: d.fingerprint,
                result: d.result,
            },
        );
    }

    /// Move finished results into the cache without blocking; returns the
    /// indices published by this call.
    pub fn collect(&mut self) -> Vec<usize> {
        let mut out = Vec::new();
        while let Ok(d) = self.results.try_recv() {
            out.push(d.idx);
            self.publish(d);
        }
        out
    }

    /// Like [`collect`](Self::collect) but waits up to `timeout` for
    /// outstanding jobs.
    pub fn collect_wait(&mut self, timeout: Duration) -> Vec<usize> {
        let deadline = Instant::now() + timeout;
        let mut out = self.collect();
        while self.pending > 0 {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.results.recv_timeout(left) {
                Ok(d) => {
                    out.push(d.idx);
                    self.publish(d);
                }
                Err(RecvTimeoutError::Timeout) | Err(RecvTimeoutError::Disconnected) => break,
            }
        }
        out
    }

    pub fn pending(&self) -> usize {
        self.pending
    }

    /// Take the cached result for `idx` if it was computed on a screen with
    /// `fingerprint` and its confidence exceeds `threshold`. Any other entry
    /// for `idx`, including a failed one, is discarded.
    pub fn try_get(&mut self, idx: usize, fingerprint: u64, threshold: f64) -> Option<Grounding> {
        let entry = self.cache.remove(&idx)?;
        match entry.result {
            Ok(g) if entry.fingerprint == fingerprint && g.confidence() > threshold => Some(g),
            _ => None,
        }
    }
}

impl Drop for PrecheckPipeline {
    fn drop(&mut self) {
        self.jobs.take();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}
