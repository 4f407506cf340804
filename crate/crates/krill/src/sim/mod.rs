//! Deterministic discrete-event simulation of a batch HPC cluster.
//!
//! The model: nodes × cores with per-node multiplicative slowdowns, a
//! priority queue with gang (all-or-nothing) core allocation and no
//! backfill, and greedy within-job task dispatch — a freed core immediately
//! takes the job's next unstarted task. Task service time is
//! `base_time × node.slowdown × (1 + jitter_draw)`, with jitter drawn
//! deterministically from the config seed at enqueue time.
//!
//! Queued jobs are ranked by the priority key
//! `(user_running_jobs, requested_cores, submit_seq)`, recomputed every time
//! the dispatcher runs; the head job blocks the queue until its full core
//! request fits (no backfill). Events are processed in
//! (time, kind, insertion order) and the resulting trace is byte-identical
//! across runs for identical inputs.

mod backend;
mod scenario;

pub use backend::SimBackend;
pub use scenario::{
    parse_cluster_config, parse_scenario, run_scenario, write_summary_tsv, write_trace_jsonl,
    JobSummary, Scenario, ScenarioJob, ScenarioRun,
};

use std::collections::{BTreeSet, BinaryHeap, HashMap, HashSet};
use std::cmp::Reverse;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("cluster must have at least one node")]
    ZeroNodes,
    #[error("node {node_id:?}: cores must be >= 1")]
    ZeroCores { node_id: String },
    #[error("node {node_id:?}: slowdown {slowdown} must be >= 1.0")]
    InvalidSlowdown { node_id: String, slowdown: f64 },
    #[error("service_time_jitter {0} must be >= 0")]
    InvalidJitter(f64),
    #[error("duplicate node id {0:?}")]
    DuplicateNodeId(String),
    #[error("job {job_id:?}: requested {requested} cores but the cluster has {capacity}")]
    CapacityExceeded { job_id: String, requested: u32, capacity: u32 },
    #[error("job {job_id:?}: requested_cores must be >= 1")]
    ZeroCoreRequest { job_id: String },
    #[error("job {job_id:?}: task list must not be empty")]
    EmptyTasks { job_id: String },
    #[error("job {job_id:?}: negative task time {time}")]
    NegativeTaskTime { job_id: String, time: f64 },
    #[error("duplicate job id {0:?}")]
    DuplicateJobId(String),
    #[error("job {job_id:?}: arrival {at} is before the virtual clock {clock}")]
    ArrivalInPast { job_id: String, at: f64, clock: f64 },
    #[error("unknown job id {0:?}")]
    UnknownJob(String),
    #[error("job {0:?} cannot finish: no pending events remain")]
    Stuck(String),
    #[error("job {0:?} is not finished in this trace")]
    JobNotFinished(String),
    #[error("job {0:?} does not appear in this trace")]
    JobNotInTrace(String),
    #[error("scenario error: {0}")]
    Scenario(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One simulated node: a straggler is a node with slowdown > 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimNode {
    pub node_id: String,
    pub cores: u32,
    pub slowdown: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimClusterConfig {
    pub nodes: Vec<SimNode>,
    pub seed: u64,
    /// Fractional service-time jitter; each task draws a factor in
    /// [1, 1 + jitter) deterministically from the seed.
    pub service_time_jitter: f64,
}

impl SimClusterConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.nodes.is_empty() {
            return Err(SimError::ZeroNodes);
        }
        let mut seen = HashSet::new();
        for n in &self.nodes {
            if !seen.insert(n.node_id.as_str()) {
                return Err(SimError::DuplicateNodeId(n.node_id.clone()));
            }
            if n.cores < 1 {
                return Err(SimError::ZeroCores { node_id: n.node_id.clone() });
            }
            if !(n.slowdown >= 1.0) {
                return Err(SimError::InvalidSlowdown { node_id: n.node_id.clone(), slowdown: n.slowdown });
            }
        }
        if !(self.service_time_jitter >= 0.0) {
            return Err(SimError::InvalidJitter(self.service_time_jitter));
        }
        Ok(())
    }

    pub fn capacity(&self) -> u32 {
        self.nodes.iter().map(|n| n.cores).sum()
    }

    pub fn has_stragglers(&self) -> bool {
        self.nodes.iter().any(|n| n.slowdown > 1.0)
    }
}

/// A schedulable job: a gang core request plus per-task base service times.
#[derive(Debug, Clone, PartialEq)]
pub struct SimJob {
    pub job_id: String,
    pub user: String,
    pub requested_cores: u32,
    pub task_times: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SimEventKind {
    JobQueued,
    JobStarted,
    TaskStarted,
    TaskFinished,
    JobFinished,
}

/// One trace event; `task`/`node`/`core` are set for task-level events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub t: f64,
    pub kind: SimEventKind,
    pub job: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub task: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub node: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub core: Option<u32>,
}

/// How far [`SimCluster::advance`] should run the virtual clock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Until {
    /// Process all events with time <= the bound, then set the clock to it.
    Time(f64),
    /// Run until no pending events remain.
    Quiescent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct CoreRef {
    node: usize,
    core: u32,
}

#[derive(Debug)]
struct QueuedJob {
    job: SimJob,
    submit_seq: u64,
    jitter: Vec<f64>,
}

#[derive(Debug)]
struct RunningJob {
    job: SimJob,
    jitter: Vec<f64>,
    cores: Vec<CoreRef>,
    next_task: usize,
    unfinished: usize,
}

#[derive(Debug)]
enum Payload {
    Arrival(QueuedJob),
    Completion { job_id: String, task: usize, core: CoreRef },
}

/// Heap entries order by (time, event rank, insertion sequence); rank places
/// arrivals before completions at equal times, matching the declared event
/// kind order.
#[derive(Debug)]
struct HeapEntry {
    time: f64,
    rank: u8,
    seq: u64,
    payload: Payload,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == std::cmp::Ordering::Equal
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.time
            .total_cmp(&other.time)
            .then_with(|| self.rank.cmp(&other.rank))
            .then_with(|| self.seq.cmp(&other.seq))
    }
}

const RANK_ARRIVAL: u8 = 0;
const RANK_COMPLETION: u8 = 1;

/// The simulation instance: single-threaded, owns its virtual clock.
pub struct SimCluster {
    config: SimClusterConfig,
    clock: f64,
    /// Free core indices per node, allocated lowest node/core first.
    free: Vec<BTreeSet<u32>>,
    total_free: u32,
    queue: Vec<QueuedJob>,
    running: HashMap<String, RunningJob>,
    finished: HashSet<String>,
    known_jobs: HashSet<String>,
    user_running: HashMap<String, u32>,
    heap: BinaryHeap<Reverse<HeapEntry>>,
    seq: u64,
    submit_counter: u64,
    rng: ChaCha8Rng,
    trace: Vec<SimEvent>,
}

/// Validate the config and create an idle cluster with the clock at zero.
pub fn build_cluster(config: SimClusterConfig) -> Result<SimCluster, SimError> {
    config.validate()?;
    let free: Vec<BTreeSet<u32>> = config.nodes.iter().map(|n| (0..n.cores).collect()).collect();
    let total_free = config.capacity();
    let rng = ChaCha8Rng::seed_from_u64(config.seed);
    Ok(SimCluster {
        config,
        clock: 0.0,
        free,
        total_free,
        queue: Vec::new(),
        running: HashMap::new(),
        finished: HashSet::new(),
        known_jobs: HashSet::new(),
        user_running: HashMap::new(),
        heap: BinaryHeap::new(),
        seq: 0,
        submit_counter: 0,
        rng,
        trace: Vec::new(),
    })
}

impl SimCluster {
    pub fn config(&self) -> &SimClusterConfig {
        &self.config
    }

    pub fn capacity(&self) -> u32 {
        self.config.capacity()
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    /// Cumulative event trace since the cluster was built.
    pub fn trace(&self) -> &[SimEvent] {
        &self.trace
    }

    pub fn job_finished(&self, job_id: &str) -> bool {
        self.finished.contains(job_id)
    }

    pub fn is_quiescent(&self) -> bool {
        self.heap.is_empty()
    }

    fn next_seq(&mut self) -> u64 {
        self.seq += 1;
        self.seq
    }

    /// Put a job in the queue at virtual time `at` (>= the current clock).
    /// It starts only once its full core request is simultaneously free.
    pub fn enqueue_job(&mut self, job: SimJob, at: f64) -> Result<(), SimError> {
        if job.requested_cores < 1 {
            return Err(SimError::ZeroCoreRequest { job_id: job.job_id });
        }
        if job.requested_cores > self.capacity() {
            return Err(SimError::CapacityExceeded {
                job_id: job.job_id,
                requested: job.requested_cores,
                capacity: self.capacity(),
            });
        }
        if job.task_times.is_empty() {
            return Err(SimError::EmptyTasks { job_id: job.job_id });
        }
        if let Some(t) = job.task_times.iter().find(|t| **t < 0.0) {
            return Err(SimError::NegativeTaskTime { job_id: job.job_id.clone(), time: *t });
        }
        if at < self.clock {
            return Err(SimError::ArrivalInPast { job_id: job.job_id, at, clock: self.clock });
        }
        if !self.known_jobs.insert(job.job_id.clone()) {
            return Err(SimError::DuplicateJobId(job.job_id));
        }

        // jitter factors are drawn at enqueue so they depend only on
        // submission order, not on scheduling
        let jitter: Vec<f64> = job
            .task_times
            .iter()
            .map(|_| 1.0 + self.config.service_time_jitter * self.rng.gen::<f64>())
            .collect();
        self.submit_counter += 1;
        let queued = QueuedJob { job, submit_seq: self.submit_counter, jitter };
        let seq = self.next_seq();
        self.heap.push(Reverse(HeapEntry {
            time: at,
            rank: RANK_ARRIVAL,
            seq,
            payload: Payload::Arrival(queued),
        }));
        Ok(())
    }

    /// Drop a job that is still waiting in the queue (or whose arrival is
    /// still pending). Running jobs are not preempted; returns false for
    /// them and for unknown ids.
    pub fn cancel_queued(&mut self, job_id: &str) -> bool {
        if let Some(pos) = self.queue.iter().position(|q| q.job.job_id == job_id) {
            self.queue.remove(pos);
            return true;
        }
        let mut found = false;
        let entries = std::mem::take(&mut self.heap);
        self.heap = entries
            .into_iter()
            .filter(|Reverse(e)| match &e.payload {
                Payload::Arrival(q) if q.job.job_id == job_id => {
                    found = true;
                    false
                }
                _ => true,
            })
            .collect();
        found
    }

    fn next_event_time(&self) -> Option<f64> {
        self.heap.peek().map(|Reverse(e)| e.time)
    }

    /// Advance the virtual clock, processing events in deterministic order.
    /// Returns the events generated during this call; the cumulative trace
    /// stays available via [`SimCluster::trace`].
    pub fn advance(&mut self, until: Until) -> Vec<SimEvent> {
        let mark = self.trace.len();
        while let Some(t) = self.next_event_time() {
            if let Until::Time(limit) = until {
                if t > limit {
                    break;
                }
            }
            self.process_batch_at(t);
        }
        if let Until::Time(limit) = until {
            if limit > self.clock {
                self.clock = limit;
            }
        }
        self.trace[mark..].to_vec()
    }

    /// Advance until the given job reaches a terminal state.
    pub fn advance_until_job_done(&mut self, job_id: &str) -> Result<Vec<SimEvent>, SimError> {
        if !self.known_jobs.contains(job_id) {
            return Err(SimError::UnknownJob(job_id.to_string()));
        }
        let mark = self.trace.len();
        while !self.finished.contains(job_id) {
            match self.next_event_time() {
                Some(t) => self.process_batch_at(t),
                None => return Err(SimError::Stuck(job_id.to_string())),
            }
        }
        Ok(self.trace[mark..].to_vec())
    }

    /// Drain every event scheduled at time `t` (including ones scheduled at
    /// `t` while draining), then run the dispatcher.
    fn process_batch_at(&mut self, t: f64) {
        self.clock = t;
        while let Some(Reverse(head)) = self.heap.peek() {
            if head.time > t {
                break;
            }
            let entry = self.heap.pop().expect("peeked entry").0;
            match entry.payload {
                Payload::Arrival(q) => self.on_arrival(q),
                Payload::Completion { job_id, task, core } => self.on_completion(&job_id, task, core),
            }
        }
        self.dispatch();
    }

    fn emit(&mut self, kind: SimEventKind, job: &str, task: Option<usize>, core: Option<CoreRef>) {
        let (node, core_idx) = match core {
            Some(c) => (Some(self.config.nodes[c.node].node_id.clone()), Some(c.core)),
            None => (None, None),
        };
        self.trace.push(SimEvent { t: self.clock, kind, job: job.to_string(), task, node, core: core_idx });
    }

    fn on_arrival(&mut self, q: QueuedJob) {
        self.emit(SimEventKind::JobQueued, &q.job.job_id.clone(), None, None);
        self.queue.push(q);
    }

    fn on_completion(&mut self, job_id: &str, task: usize, core: CoreRef) {
        self.emit(SimEventKind::TaskFinished, job_id, Some(task), Some(core));
        let rj = self.running.get_mut(job_id).expect("completion for running job");
        rj.unfinished -= 1;
        let next = if rj.next_task < rj.job.task_times.len() {
            let i = rj.next_task;
            rj.next_task += 1;
            Some(i)
        } else {
            None
        };
        // freed core immediately takes the next unstarted task
        if let Some(i) = next {
            self.start_task(job_id, i, core);
            return;
        }
        let rj = self.running.get_mut(job_id).expect("running job");
        if rj.unfinished == 0 {
            let rj = self.running.remove(job_id).expect("running job");
            self.emit(SimEventKind::JobFinished, job_id, None, None);
            for c in &rj.cores {
                self.free[c.node].insert(c.core);
            }
            self.total_free += rj.cores.len() as u32;
            let count = self.user_running.get_mut(&rj.job.user).expect("user entry");
            *count -= 1;
            self.finished.insert(job_id.to_string());
        }
    }

    fn start_task(&mut self, job_id: &str, task: usize, core: CoreRef) {
        let rj = self.running.get(job_id).expect("running job");
        let service =
            rj.job.task_times[task] * self.config.nodes[core.node].slowdown * rj.jitter[task];
        self.emit(SimEventKind::TaskStarted, job_id, Some(task), Some(core));
        let seq = self.next_seq();
        self.heap.push(Reverse(HeapEntry {
            time: self.clock + service,
            rank: RANK_COMPLETION,
            seq,
            payload: Payload::Completion { job_id: job_id.to_string(), task, core },
        }));
    }

    /// Start queued jobs while the head of the priority order fits. The key
    /// is (user's running jobs, requested cores, submit order); if the head
    /// does not fit, nothing behind it may jump the queue.
    fn dispatch(&mut self) {
        loop {
            let head = self
                .queue
                .iter()
                .enumerate()
                .min_by_key(|(_, q)| {
                    (
                        self.user_running.get(&q.job.user).copied().unwrap_or(0),
                        q.job.requested_cores,
                        q.submit_seq,
                    )
                })
                .map(|(i, _)| i);
            let Some(i) = head else { break };
            let need = self.queue[i].job.requested_cores;
            if need > self.total_free {
                break; // gang allocation, no backfill
            }
            let q = self.queue.remove(i);
            self.start_job(q);
        }
    }

    fn start_job(&mut self, q: QueuedJob) {
        let need = q.job.requested_cores as usize;
        let mut cores = Vec::with_capacity(need);
        for (node, free) in self.free.iter_mut().enumerate() {
            while cores.len() < need {
                match free.iter().next().copied() {
                    Some(c) => {
                        free.remove(&c);
                        cores.push(CoreRef { node, core: c });
                    }
                    None => break,
                }
            }
            if cores.len() == need {
                break;
            }
        }
        debug_assert_eq!(cores.len(), need);
        self.total_free -= need as u32;
        *self.user_running.entry(q.job.user.clone()).or_insert(0) += 1;

        let job_id = q.job.job_id.clone();
        self.emit(SimEventKind::JobStarted, &job_id, None, None);
        let n_tasks = q.job.task_times.len();
        self.running.insert(
            job_id.clone(),
            RunningJob {
                job: q.job,
                jitter: q.jitter,
                cores: cores.clone(),
                next_task: 0,
                unfinished: n_tasks,
            },
        );
        for core in cores {
            let rj = self.running.get_mut(&job_id).expect("running job");
            if rj.next_task >= n_tasks {
                break; // gang holds the extra cores idle
            }
            let i = rj.next_task;
            rj.next_task += 1;
            self.start_task(&job_id, i, core);
        }
    }
}

/// Wait/exec/turnaround for one job, read off a trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Makespan {
    pub wait_s: f64,
    pub exec_s: f64,
    pub turnaround_s: f64,
}

/// Extract a job's timings from a trace: exec runs from job start to its
/// slowest task's completion; turnaround adds the queue wait.
pub fn job_makespan(trace: &[SimEvent], job_id: &str) -> Result<Makespan, SimError> {
    let mut queued = None;
    let mut started = None;
    let mut finished = None;
    for e in trace {
        if e.job != job_id {
            continue;
        }
        match e.kind {
            SimEventKind::JobQueued => queued = Some(e.t),
            SimEventKind::JobStarted => started = Some(e.t),
            SimEventKind::JobFinished => finished = Some(e.t),
            _ => {}
        }
    }
    let queued = queued.ok_or_else(|| SimError::JobNotInTrace(job_id.to_string()))?;
    let (started, finished) = match (started, finished) {
        (Some(s), Some(f)) => (s, f),
        _ => return Err(SimError::JobNotFinished(job_id.to_string())),
    };
    Ok(Makespan { wait_s: started - queued, exec_s: finished - started, turnaround_s: finished - queued })
}
