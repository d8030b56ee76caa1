//! Jobs, their status machine and progress records.

use std::ops::ControlFlow;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use phasefd::io::FreezeDocument;
use phasefd::{FreezeSpec, Progress, ProgressKind, Solution, SolveError, SolverConfig, Stage};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Queued,
    Running,
    Converged,
    Rounding,
    Refining,
    Done,
    Failed,
    Cancelled,
}

impl JobStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobStatus::Done | JobStatus::Failed | JobStatus::Cancelled)
    }

    /// Allowed moves: queued -> running -> (converged -> rounding ->
    /// refining)* -> done, with failed and cancelled reachable from any
    /// non-terminal state. Staying put is allowed.
    pub fn can_move_to(self, next: JobStatus) -> bool {
        use JobStatus::*;
        if self == next {
            return !self.is_terminal();
        }
        match (self, next) {
            (from, Failed | Cancelled) => !from.is_terminal(),
            (Queued, Running) => true,
            (Running, Converged) => true,
            (Converged, Rounding | Done) => true,
            (Rounding, Refining) => true,
            (Refining, Converged) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub iteration: usize,
    pub loss: f64,
    pub status: JobStatus,
    pub wall_ms: u64,
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[derive(Debug)]
struct JobState {
    status: JobStatus,
    reason: Option<String>,
    events: Vec<EventRecord>,
    loss_trace: Vec<f64>,
    iterations: usize,
    updated_ms: u64,
    solution: Option<Arc<Solution>>,
}

#[derive(Debug)]
pub struct Job {
    pub id: String,
    pub instance_id: String,
    pub parent_id: Option<String>,
    pub config: SolverConfig,
    pub freeze: FreezeSpec,
    pub created_ms: u64,
    cancel: AtomicBool,
    state: Mutex<JobState>,
}

/// Persisted form of a job (without its event log).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: String,
    pub instance_id: String,
    pub parent_id: Option<String>,
    pub status: JobStatus,
    pub reason: Option<String>,
    pub config: SolverConfig,
    pub freeze: FreezeDocument,
    pub iterations: usize,
    pub loss_trace: Vec<f64>,
    pub created_ms: u64,
    pub updated_ms: u64,
}

/// Status record returned by the API.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobView {
    pub job_id: String,
    pub instance_id: String,
    pub parent_id: Option<String>,
    pub status: JobStatus,
    pub reason: Option<String>,
    pub config: SolverConfig,
    pub iterations: usize,
    pub events: usize,
    pub final_loss: Option<f64>,
    pub loss_trace_tail: Vec<f64>,
    pub created_ms: u64,
    pub updated_ms: u64,
}

pub const TAIL: usize = 50;

impl Job {
    pub fn new(id: String, instance_id: String, parent_id: Option<String>, config: SolverConfig, freeze: FreezeSpec) -> Self {
        let now = now_ms();
        Job {
            id,
            instance_id,
            parent_id,
            config,
            freeze,
            created_ms: now,
            cancel: AtomicBool::new(false),
            state: Mutex::new(JobState {
                status: JobStatus::Queued,
                reason: None,
                events: Vec::new(),
                loss_trace: Vec::new(),
                iterations: 0,
                updated_ms: now,
                solution: None,
            }),
        }
    }

    /// Rebuilds a job from disk. Jobs that were still in flight come back
    /// failed with reason "restart".
    pub fn restore(record: JobRecord, solution: Option<Solution>) -> Result<Self, phasefd::io::IoError> {
        let freeze = record.freeze.into_spec()?;
        let (status, reason) = match record.status {
            JobStatus::Done if solution.is_none() => (JobStatus::Failed, Some("solution missing".to_string())),
            s if s.is_terminal() => (s, record.reason),
            _ => (JobStatus::Failed, Some("restart".to_string())),
        };
        let job = Job {
            id: record.job_id,
            instance_id: record.instance_id,
            parent_id: record.parent_id,
            config: record.config,
            freeze,
            created_ms: record.created_ms,
            cancel: AtomicBool::new(false),
            state: Mutex::new(JobState {
                status,
                reason,
                events: Vec::new(),
                loss_trace: record.loss_trace,
                iterations: record.iterations,
                updated_ms: record.updated_ms,
                solution: solution.map(Arc::new),
            }),
        };
        Ok(job)
    }

    fn lock(&self) -> MutexGuard<'_, JobState> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn status(&self) -> JobStatus {
        self.lock().status
    }

    pub fn solution(&self) -> Option<Arc<Solution>> {
        self.lock().solution.clone()
    }

    pub fn request_cancel(&self) {
        self.cancel.store(true, Ordering::SeqCst);
    }

    pub fn cancel_requested(&self) -> bool {
        self.cancel.load(Ordering::SeqCst)
    }

    /// Moves to `next` if the status machine allows it; returns whether it did.
    pub fn transition(&self, next: JobStatus, reason: Option<String>) -> bool {
        let mut st = self.lock();
        if !st.status.can_move_to(next) {
            return false;
        }
        st.status = next;
        if reason.is_some() {
            st.reason = reason;
        }
        st.updated_ms = now_ms();
        true
    }

    /// Records one solver progress report.
    pub fn record(&self, p: &Progress<'_>) {
        let status = match (p.kind, p.stage) {
            (ProgressKind::Converged, _) => JobStatus::Converged,
            (ProgressKind::Rounded, _) => JobStatus::Rounding,
            (ProgressKind::Iteration, Stage::Refining) => JobStatus::Refining,
            (ProgressKind::Iteration, _) => JobStatus::Running,
        };
        let mut st = self.lock();
        if st.status.can_move_to(status) {
            st.status = status;
        }
        if p.kind != ProgressKind::Converged {
            st.loss_trace.push(p.loss);
        }
        st.iterations = p.iteration;
        let seq = st.events.len() as u64;
        st.events.push(EventRecord {
            seq,
            iteration: p.iteration,
            loss: p.loss,
            status,
            wall_ms: p.wall_ms,
        });
        st.updated_ms = now_ms();
    }

    /// Progress sink that feeds this job and honors cancellation.
    pub fn sink(&self) -> impl FnMut(&Progress<'_>) -> ControlFlow<()> + '_ {
        move |p| {
            self.record(p);
            if self.cancel_requested() {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        }
    }

    /// Applies the solver's outcome.
    pub fn finish(&self, outcome: Result<Solution, SolveError>) {
        let mut st = self.lock();
        if st.status.is_terminal() {
            return;
        }
        match outcome {
            Ok(solution) => {
                st.iterations = solution.iterations;
                st.loss_trace = solution.loss_trace.clone();
                st.solution = Some(Arc::new(solution));
                st.status = JobStatus::Done;
                if !st.solution.as_ref().is_some_and(|s| s.converged) {
                    st.reason = Some("iteration cap reached".into());
                }
            }
            Err(SolveError::Cancelled { .. }) => {
                st.status = JobStatus::Cancelled;
                st.reason = Some("cancelled".into());
            }
            Err(e) => {
                st.status = JobStatus::Failed;
                st.reason = Some(e.to_string());
            }
        }
        st.updated_ms = now_ms();
    }

    /// Progress records with `seq >= cursor`, at most `limit` of them.
    pub fn events_from(&self, cursor: u64, limit: usize) -> (Vec<EventRecord>, JobStatus) {
        let st = self.lock();
        let start = (cursor as usize).min(st.events.len());
        let end = start.saturating_add(limit).min(st.events.len());
        (st.events[start..end].to_vec(), st.status)
    }

    pub fn view(&self) -> JobView {
        let st = self.lock();
        let tail_start = st.loss_trace.len().saturating_sub(TAIL);
        JobView {
            job_id: self.id.clone(),
            instance_id: self.instance_id.clone(),
            parent_id: self.parent_id.clone(),
            status: st.status,
            reason: st.reason.clone(),
            config: self.config.clone(),
            iterations: st.iterations,
            events: st.events.len(),
            final_loss: st.loss_trace.last().copied(),
            loss_trace_tail: st.loss_trace[tail_start..].to_vec(),
            created_ms: self.created_ms,
            updated_ms: st.updated_ms,
        }
    }

    pub fn record_for_disk(&self) -> JobRecord {
        let st = self.lock();
        JobRecord {
            job_id: self.id.clone(),
            instance_id: self.instance_id.clone(),
            parent_id: self.parent_id.clone(),
            status: st.status,
            reason: st.reason.clone(),
            config: self.config.clone(),
            freeze: FreezeDocument::from(&self.freeze),
            iterations: st.iterations,
            loss_trace: st.loss_trace.clone(),
            created_ms: self.created_ms,
            updated_ms: st.updated_ms,
        }
    }
}
