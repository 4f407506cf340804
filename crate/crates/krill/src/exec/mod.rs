//! The workflow manager: schedulable tasks with a terminal-state machine,
//! a pluggable backend contract, success/failure inference, and blocking
//! scatter-gather pipeline runs.

mod ledger;
mod local;
mod runner;
mod status;

pub use ledger::{read_ledger, EventLog, LedgerEvent};
pub use local::LocalBackend;
pub use runner::{
    plan_stage_tasks, ExecOptions, Executor, RunResult, StageOutcome, TaskReport,
};
pub use status::{default_error_patterns, infer_task_status};

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::pipeline::Violation;
use crate::seq::SeqError;

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("invalid job: {0}")]
    InvalidJob(String),
    #[error("invalid state transition {from} -> {to}")]
    InvalidTransition { from: String, to: String },
    #[error("requested {requested} cores but backend capacity is {capacity}")]
    CapacityExceeded { requested: u32, capacity: u32 },
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("unknown backend handle {0}")]
    UnknownHandle(u64),
    #[error("stage {stage:?}: placeholder {{{token}}} cannot be expanded")]
    PlaceholderUnexpanded { stage: String, token: String },
    #[error("workdir already exists: {0}")]
    WorkdirCollision(PathBuf),
    #[error("stage {stage:?}: expected {expected} partitions for the core budget, got {got}")]
    PartitionCountMismatch { stage: String, expected: usize, got: usize },
    #[error("pipeline spec is invalid: {}", format_violations(.0))]
    SpecInvalid(Vec<Violation>),
    #[error("timed out waiting for tasks: {}", .pending.join(", "))]
    Timeout { pending: Vec<String> },
    #[error("stage {stage_id:?} failed: {}", format_failures(.failures))]
    StageFailed {
        stage_id: String,
        failures: Vec<(String, FailureReason)>,
        /// Stages that completed before the failure, with their metrics.
        completed: Box<RunResult>,
    },
    #[error("gather failed for stage {stage:?}: {msg}")]
    GatherFailed { stage: String, msg: String },
    #[error(transparent)]
    Seq(#[from] SeqError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_violations(violations: &[Violation]) -> String {
    violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

fn format_failures(failures: &[(String, FailureReason)]) -> String {
    failures
        .iter()
        .map(|(id, r)| format!("{id}: {r}"))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Why a task failed; exactly one kind per failure, chosen by the
/// precedence rule in [`infer_task_status`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FailureReason {
    pub kind: FailureKind,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    BackendFailed,
    NonzeroExit,
    MissingOutput,
    LogError,
    Timeout,
}

impl FailureKind {
    pub fn label(&self) -> &'static str {
        match self {
            FailureKind::BackendFailed => "backend_failed",
            FailureKind::NonzeroExit => "nonzero_exit",
            FailureKind::MissingOutput => "missing_output",
            FailureKind::LogError => "log_error",
            FailureKind::Timeout => "timeout",
        }
    }
}

impl std::fmt::Display for FailureReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} ({})", self.kind.label(), self.detail)
    }
}

/// Task lifecycle: Pending -> Queued -> Running -> (Succeeded | Failed).
/// Failure is also reachable from Pending/Queued (backend loss, cancel,
/// timeout); terminal states are immutable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TaskState {
    Pending,
    Queued,
    Running,
    Succeeded,
    Failed(FailureReason),
}

impl TaskState {
    pub fn is_terminal(&self) -> bool {
        matches!(self, TaskState::Succeeded | TaskState::Failed(_))
    }

    pub fn label(&self) -> &'static str {
        match self {
            TaskState::Pending => "pending",
            TaskState::Queued => "queued",
            TaskState::Running => "running",
            TaskState::Succeeded => "succeeded",
            TaskState::Failed(_) => "failed",
        }
    }
}

/// One schedulable unit of work: a fully expanded command in a fresh
/// workdir, with declared outputs and log globs.
#[derive(Debug, Clone)]
pub struct Task {
    pub task_id: String,
    pub stage_id: String,
    pub part: Option<usize>,
    pub command: String,
    pub workdir: PathBuf,
    pub expected_outputs: Vec<PathBuf>,
    pub log_globs: Vec<String>,
    /// Base service time for the simulator backend; ignored locally.
    pub base_time_s: f64,
    state: TaskState,
    exit_code: Option<i32>,
}

impl Task {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        task_id: impl Into<String>,
        stage_id: impl Into<String>,
        part: Option<usize>,
        command: impl Into<String>,
        workdir: PathBuf,
        expected_outputs: Vec<PathBuf>,
        log_globs: Vec<String>,
        base_time_s: f64,
    ) -> Result<Self, ExecError> {
        let task_id = task_id.into();
        if expected_outputs.is_empty() {
            return Err(ExecError::InvalidTask(format!("task {task_id:?}: expected_outputs must not be empty")));
        }
        Ok(Task {
            task_id,
            stage_id: stage_id.into(),
            part,
            command: command.into(),
            workdir,
            expected_outputs,
            log_globs,
            base_time_s,
            state: TaskState::Pending,
            exit_code: None,
        })
    }

    pub fn state(&self) -> &TaskState {
        &self.state
    }

    pub fn exit_code(&self) -> Option<i32> {
        self.exit_code
    }

    pub fn set_exit_code(&mut self, code: Option<i32>) {
        self.exit_code = code;
    }

    /// Move along the state machine; anything else (including leaving a
    /// terminal state) is rejected.
    pub fn transition(&mut self, to: TaskState) -> Result<(), ExecError> {
        let ok = matches!(
            (&self.state, &to),
            (TaskState::Pending, TaskState::Queued)
                | (TaskState::Queued, TaskState::Running)
                | (TaskState::Running, TaskState::Succeeded)
                | (TaskState::Pending, TaskState::Failed(_))
                | (TaskState::Queued, TaskState::Failed(_))
                | (TaskState::Running, TaskState::Failed(_))
        );
        if !ok {
            return Err(ExecError::InvalidTransition {
                from: self.state.label().to_string(),
                to: to.label().to_string(),
            });
        }
        self.state = to;
        Ok(())
    }
}

/// A set of tasks submitted to a backend as one gang-scheduled job.
#[derive(Debug, Clone)]
pub struct JobSubmission {
    pub job_id: String,
    pub user: String,
    pub requested_cores: u32,
    pub tasks: Vec<Task>,
    pub submit_seq: u64,
}

impl JobSubmission {
    pub fn new(
        job_id: impl Into<String>,
        user: impl Into<String>,
        requested_cores: u32,
        tasks: Vec<Task>,
        submit_seq: u64,
    ) -> Result<Self, ExecError> {
        let job_id = job_id.into();
        if tasks.is_empty() {
            return Err(ExecError::InvalidJob(format!("job {job_id:?}: tasks must not be empty")));
        }
        if requested_cores < 1 {
            return Err(ExecError::InvalidJob(format!("job {job_id:?}: requested_cores must be >= 1")));
        }
        Ok(JobSubmission { job_id, user: user.into(), requested_cores, tasks, submit_seq })
    }
}

/// Opaque binding between a submitted job and a backend; valid until the
/// job is terminal and results are collected.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BackendHandle {
    pub id: u64,
    pub job_id: String,
}

/// Task state as the backend sees it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendTaskState {
    Queued,
    Running,
    Done,
    Failed,
}

/// Per-task poll result. Timestamps are seconds (wall-clock epoch for the
/// local backend, virtual for the simulator) and feed run metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskPoll {
    pub state: BackendTaskState,
    pub exit_code: Option<i32>,
    pub started_at: Option<f64>,
    pub finished_at: Option<f64>,
}

/// Execution backend contract, implemented by [`LocalBackend`] and the
/// simulator's `SimBackend`.
pub trait Backend {
    fn capacity(&self) -> u32;
    fn submit(&mut self, job: JobSubmission) -> Result<BackendHandle, ExecError>;
    fn poll(&mut self, handle: &BackendHandle) -> Result<Vec<TaskPoll>, ExecError>;
    fn cancel(&mut self, handle: &BackendHandle) -> Result<(), ExecError>;
    /// Whether task commands actually run. The simulator models service
    /// time only, so pipeline datasets pass through its stages unchanged.
    fn executes_commands(&self) -> bool {
        true
    }
}

/// Output-existence oracle used by status inference.
pub trait OutputProbe {
    fn exists(&self, path: &Path) -> bool;
}

/// Log-line source used by status inference.
pub trait LogProbe {
    fn lines(&self, globs: &[String]) -> Vec<String>;
}

/// Real-filesystem probes.
pub struct FsProbe;

impl OutputProbe for FsProbe {
    fn exists(&self, path: &Path) -> bool {
        path.is_file()
    }
}

impl LogProbe for FsProbe {
    fn lines(&self, globs: &[String]) -> Vec<String> {
        let mut lines = Vec::new();
        for g in globs {
            for path in expand_glob(Path::new(g)) {
                if let Ok(text) = std::fs::read_to_string(&path) {
                    lines.extend(text.lines().map(|l| l.to_string()));
                }
            }
        }
        lines
    }
}

/// Expand a path whose final component may contain `*` wildcards. Matches
/// are sorted for determinism.
pub(crate) fn expand_glob(pattern: &Path) -> Vec<PathBuf> {
    let name = match pattern.file_name().and_then(|n| n.to_str()) {
        Some(n) => n,
        None => return Vec::new(),
    };
    if !name.contains('*') {
        return if pattern.exists() { vec![pattern.to_path_buf()] } else { Vec::new() };
    }
    let dir = pattern.parent().unwrap_or_else(|| Path::new("."));
    let regex = regex::Regex::new(&format!("^{}$", regex::escape(name).replace(r"\*", ".*")))
        .expect("glob regex");
    let mut matches: Vec<PathBuf> = match std::fs::read_dir(dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                p.is_file()
                    && p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| regex.is_match(n))
            })
            .collect(),
        Err(_) => Vec::new(),
    };
    matches.sort();
    matches
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task() -> Task {
        Task::new(
            "t1",
            "stage",
            Some(0),
            "true",
            PathBuf::from("/tmp/w"),
            vec![PathBuf::from("/tmp/w/out")],
            vec![],
            1.0,
        )
        .unwrap()
    }

    fn failed() -> TaskState {
        TaskState::Failed(FailureReason { kind: FailureKind::NonzeroExit, detail: "x".into() })
    }

    #[test]
    fn happy_path_transitions() {
        let mut t = task();
        t.transition(TaskState::Queued).unwrap();
        t.transition(TaskState::Running).unwrap();
        t.transition(TaskState::Succeeded).unwrap();
        assert!(t.state().is_terminal());
    }

    #[test]
    fn terminal_states_are_immutable() {
        let mut t = task();
        t.transition(TaskState::Queued).unwrap();
        t.transition(TaskState::Running).unwrap();
        t.transition(failed()).unwrap();
        for to in [TaskState::Pending, TaskState::Queued, TaskState::Running, TaskState::Succeeded, failed()] {
            assert!(t.transition(to).is_err());
        }
    }

    #[test]
    fn cannot_skip_to_succeeded() {
        let mut t = task();
        assert!(t.transition(TaskState::Succeeded).is_err());
        t.transition(TaskState::Queued).unwrap();
        assert!(t.transition(TaskState::Succeeded).is_err());
    }

    #[test]
    fn failure_reachable_from_queued() {
        let mut t = task();
        t.transition(TaskState::Queued).unwrap();
        t.transition(failed()).unwrap();
    }

    #[test]
    fn random_transition_sequences_keep_invariants() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let mut t = task();
            let mut was_terminal = false;
            for _ in 0..12 {
                let to = match rng.gen_range(0..5) {
                    0 => TaskState::Pending,
                    1 => TaskState::Queued,
                    2 => TaskState::Running,
                    3 => TaskState::Succeeded,
                    _ => failed(),
                };
                let before = t.state().clone();
                let res = t.transition(to);
                if was_terminal {
                    assert!(res.is_err(), "escaped terminal state {before:?}");
                }
                was_terminal = t.state().is_terminal();
            }
        }
    }

    #[test]
    fn empty_outputs_rejected() {
        let err = Task::new("t", "s", None, "true", PathBuf::from("/w"), vec![], vec![], 1.0)
            .unwrap_err();
        assert!(matches!(err, ExecError::InvalidTask(_)));
    }

    #[test]
    fn glob_expansion() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.log"), "x").unwrap();
        std::fs::write(dir.path().join("b.log"), "x").unwrap();
        std::fs::write(dir.path().join("c.txt"), "x").unwrap();
        let hits = expand_glob(&dir.path().join("*.log"));
        assert_eq!(hits.len(), 2);
        let exact = expand_glob(&dir.path().join("c.txt"));
        assert_eq!(exact.len(), 1);
        assert!(expand_glob(&dir.path().join("*.nope")).is_empty());
    }
}
