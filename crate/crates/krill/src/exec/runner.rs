//! Task planning and the blocking pipeline driver: split -> plan -> submit
//! -> wait -> merge, stage by stage.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use regex::Regex;

use super::{
    default_error_patterns, infer_task_status, Backend, BackendHandle, EventLog, ExecError,
    FailureKind, FailureReason, FsProbe, JobSubmission, LogProbe, OutputProbe, Task, TaskPoll,
    TaskState,
};
use crate::metrics::RunMetrics;
use crate::pipeline::{PipelineSpec, ScatterMode, StageInput, StageSpec};
use crate::seq::{merge_parts, read_records, split_records, write_records, Partition, SeqFormat, SequenceRecord};

/// Knobs for the executor; defaults are sensible for local runs.
pub struct ExecOptions {
    pub poll_interval: Duration,
    pub timeout: Duration,
    pub error_patterns: Vec<Regex>,
    pub user: String,
}

impl Default for ExecOptions {
    fn default() -> Self {
        ExecOptions {
            poll_interval: Duration::from_millis(20),
            timeout: Duration::from_secs(600),
            error_patterns: default_error_patterns(),
            user: std::env::var("KRILL_USER").unwrap_or_else(|_| "local".to_string()),
        }
    }
}

fn expand_template(
    template: &str,
    vars: &BTreeMap<&str, Option<String>>,
    stage: &str,
) -> Result<String, ExecError> {
    let mut out = String::with_capacity(template.len());
    let bytes = template.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' && i + 1 < bytes.len() && bytes[i + 1] == b'{' {
            out.push('{');
            i += 2;
            continue;
        }
        if bytes[i] == b'}' && i + 1 < bytes.len() && bytes[i + 1] == b'}' {
            out.push('}');
            i += 2;
            continue;
        }
        if bytes[i] == b'{' {
            if let Some(end) = template[i + 1..].find(['{', '}']) {
                if bytes[i + 1 + end] == b'}' {
                    let token = &template[i + 1..i + 1 + end];
                    if let Some(value) = vars.get(token) {
                        match value {
                            Some(v) => out.push_str(v),
                            None => {
                                return Err(ExecError::PlaceholderUnexpanded {
                                    stage: stage.to_string(),
                                    token: token.to_string(),
                                })
                            }
                        }
                        i += end + 2;
                        continue;
                    }
                }
            }
        }
        let ch = template[i..].chars().next().expect("in bounds");
        out.push(ch);
        i += ch.len_utf8();
    }
    Ok(out)
}

fn dataset_format(partitions: &[Partition]) -> SeqFormat {
    let all_quality = partitions
        .iter()
        .flat_map(|p| p.records.iter())
        .all(|r| r.quality.is_some());
    if all_quality {
        SeqFormat::Fastq
    } else {
        SeqFormat::Fasta
    }
}

/// Create fresh workdirs under `run_root/<stage>/part_<k>`, write each
/// partition's input file, expand the command template, and assemble the
/// job. One task per partition for scatter stages, exactly one otherwise.
pub fn plan_stage_tasks(
    stage: &StageSpec,
    partitions: &[Partition],
    core_budget: u32,
    run_root: &Path,
    job_id: &str,
    user: &str,
    submit_seq: u64,
) -> Result<JobSubmission, ExecError> {
    match stage.mode {
        ScatterMode::Scatter => {
            if partitions.len() != core_budget as usize {
                return Err(ExecError::PartitionCountMismatch {
                    stage: stage.id.clone(),
                    expected: core_budget as usize,
                    got: partitions.len(),
                });
            }
        }
        ScatterMode::Single => {
            if partitions.len() != 1 {
                return Err(ExecError::PartitionCountMismatch {
                    stage: stage.id.clone(),
                    expected: 1,
                    got: partitions.len(),
                });
            }
        }
    }

    let format = dataset_format(partitions);
    let stage_dir = run_root.join(&stage.id);
    let mut tasks = Vec::with_capacity(partitions.len());
    for (k, part) in partitions.iter().enumerate() {
        let workdir = stage_dir.join(format!("part_{k}"));
        if workdir.exists() {
            return Err(ExecError::WorkdirCollision(workdir));
        }
        std::fs::create_dir_all(&workdir)?;
        let input_path = workdir.join(format!("input.{}", format.extension()));
        let file = std::fs::File::create(&input_path)?;
        write_records(&part.records, format, std::io::BufWriter::new(file))?;

        let part_var = match stage.mode {
            ScatterMode::Scatter => Some(k.to_string()),
            ScatterMode::Single => None,
        };
        let part_vars: BTreeMap<&str, Option<String>> =
            [("part", part_var.clone())].into_iter().collect();
        let outputs: Vec<PathBuf> = stage
            .outputs
            .iter()
            .map(|tmpl| Ok(workdir.join(expand_template(tmpl, &part_vars, &stage.id)?)))
            .collect::<Result<_, ExecError>>()?;
        let log_glob = workdir
            .join(expand_template(&stage.logs, &part_vars, &stage.id)?)
            .to_string_lossy()
            .into_owned();

        let vars: BTreeMap<&str, Option<String>> = [
            ("input", Some(input_path.to_string_lossy().into_owned())),
            ("output", outputs.first().map(|p| p.to_string_lossy().into_owned())),
            ("part", part_var),
            ("workdir", Some(workdir.to_string_lossy().into_owned())),
        ]
        .into_iter()
        .collect();
        let command = expand_template(&stage.command, &vars, &stage.id)?;

        tasks.push(Task::new(
            format!("{}.p{k}", stage.id),
            &stage.id,
            match stage.mode {
                ScatterMode::Scatter => Some(k),
                ScatterMode::Single => None,
            },
            command,
            workdir,
            outputs,
            vec![log_glob],
            stage.base_time_s,
        )?);
    }
    JobSubmission::new(job_id, user, core_budget, tasks, submit_seq)
}

/// Terminal (or last observed) state of one task after a wait.
#[derive(Debug, Clone)]
pub struct TaskReport {
    pub task_id: String,
    pub stage_id: String,
    pub part: Option<usize>,
    pub state: TaskState,
    pub exit_code: Option<i32>,
    pub started_at: Option<f64>,
    pub finished_at: Option<f64>,
}

impl TaskReport {
    pub fn duration_s(&self) -> Option<f64> {
        match (self.started_at, self.finished_at) {
            (Some(s), Some(f)) => Some(f - s),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub stage_id: String,
    pub reports: Vec<TaskReport>,
    pub makespan_s: f64,
    /// Result files moved out of the (deleted) task workdirs.
    pub saved_outputs: Vec<PathBuf>,
    /// Merged dataset file, present when a later stage consumes this one.
    pub gathered: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub run_root: PathBuf,
    pub stages: Vec<StageOutcome>,
    pub metrics: RunMetrics,
}

/// The workflow manager. Owns the backend, a serialized job store, and the
/// run ledger; all task state changes flow through here.
pub struct Executor<B: Backend> {
    backend: B,
    opts: ExecOptions,
    fs: Box<dyn OutputProbe>,
    logs: Box<dyn LogProbe>,
    ledger: Option<EventLog>,
    jobs: HashMap<u64, JobSubmission>,
    timings: HashMap<u64, Vec<(Option<f64>, Option<f64>)>>,
    next_seq: u64,
}

impl<B: Backend> Executor<B> {
    pub fn new(backend: B) -> Self {
        Executor {
            backend,
            opts: ExecOptions::default(),
            fs: Box::new(FsProbe),
            logs: Box::new(FsProbe),
            ledger: None,
            jobs: HashMap::new(),
            timings: HashMap::new(),
            next_seq: 0,
        }
    }

    pub fn with_options(mut self, opts: ExecOptions) -> Self {
        self.opts = opts;
        self
    }

    /// Record every task state transition to an append-only JSONL file.
    pub fn with_ledger(mut self, path: &Path) -> std::io::Result<Self> {
        self.ledger = Some(EventLog::open(path)?);
        Ok(self)
    }

    /// Swap the filesystem/log probes (used by tests to fake outcomes).
    pub fn with_probes(mut self, fs: Box<dyn OutputProbe>, logs: Box<dyn LogProbe>) -> Self {
        self.fs = fs;
        self.logs = logs;
        self
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    pub fn backend_mut(&mut self) -> &mut B {
        &mut self.backend
    }

    pub fn options(&self) -> &ExecOptions {
        &self.opts
    }

    pub fn next_submit_seq(&mut self) -> u64 {
        self.next_seq += 1;
        self.next_seq
    }

    fn record(&mut self, task_id: &str, old: &str, new: &str, reason: Option<&str>) {
        if let Some(ledger) = self.ledger.as_mut() {
            let _ = ledger.record(task_id, old, new, reason);
        }
    }

    /// Hand a job to the backend; tasks move Pending -> Queued. Returns
    /// immediately, completion is observed via [`Executor::wait_all`].
    pub fn submit_job(&mut self, mut job: JobSubmission) -> Result<BackendHandle, ExecError> {
        if job.requested_cores > self.backend.capacity() {
            return Err(ExecError::CapacityExceeded {
                requested: job.requested_cores,
                capacity: self.backend.capacity(),
            });
        }
        for task in &mut job.tasks {
            task.transition(TaskState::Queued)?;
        }
        let handle = self.backend.submit(job.clone())?;
        for task in &job.tasks {
            self.record(&task.task_id, "pending", "queued", None);
        }
        self.timings.insert(handle.id, vec![(None, None); job.tasks.len()]);
        self.jobs.insert(handle.id, job);
        Ok(handle)
    }

    fn apply_poll(&mut self, handle_id: u64, polls: &[TaskPoll]) -> Result<bool, ExecError> {
        let job = self.jobs.get_mut(&handle_id).ok_or(ExecError::UnknownHandle(handle_id))?;
        let timings = self.timings.get_mut(&handle_id).expect("timing slots");
        let mut all_terminal = true;
        let mut ledger_lines: Vec<(String, &str, &str, Option<String>)> = Vec::new();
        for (i, (task, poll)) in job.tasks.iter_mut().zip(polls).enumerate() {
            if task.state().is_terminal() {
                continue;
            }
            let inferred = infer_task_status(
                task,
                self.fs.as_ref(),
                self.logs.as_ref(),
                poll.state,
                poll.exit_code,
                &self.opts.error_patterns,
            );
            match inferred {
                TaskState::Queued | TaskState::Pending => {
                    all_terminal = false;
                }
                TaskState::Running => {
                    if matches!(task.state(), TaskState::Queued) {
                        task.transition(TaskState::Running)?;
                        ledger_lines.push((task.task_id.clone(), "queued", "running", None));
                    }
                    all_terminal = false;
                }
                TaskState::Succeeded => {
                    if matches!(task.state(), TaskState::Queued) {
                        task.transition(TaskState::Running)?;
                        ledger_lines.push((task.task_id.clone(), "queued", "running", None));
                    }
                    task.set_exit_code(poll.exit_code);
                    task.transition(TaskState::Succeeded)?;
                    timings[i] = (poll.started_at, poll.finished_at);
                    ledger_lines.push((task.task_id.clone(), "running", "succeeded", None));
                }
                TaskState::Failed(reason) => {
                    let old = task.state().label();
                    task.set_exit_code(poll.exit_code);
                    let detail = reason.to_string();
                    task.transition(TaskState::Failed(reason))?;
                    timings[i] = (poll.started_at, poll.finished_at);
                    ledger_lines.push((task.task_id.clone(), old, "failed", Some(detail)));
                }
            }
        }
        for (task_id, old, new, reason) in ledger_lines {
            self.record(&task_id, old, new, reason.as_deref());
        }
        Ok(all_terminal)
    }

    fn fail_remaining(&mut self, handles: &[BackendHandle], kind: FailureKind, detail: &str) {
        for h in handles {
            if let Some(job) = self.jobs.get_mut(&h.id) {
                let mut lines = Vec::new();
                for task in &mut job.tasks {
                    if !task.state().is_terminal() {
                        let old = task.state().label();
                        let reason = FailureReason { kind, detail: detail.to_string() };
                        let msg = reason.to_string();
                        let _ = task.transition(TaskState::Failed(reason));
                        lines.push((task.task_id.clone(), old, msg));
                    }
                }
                for (task_id, old, msg) in lines {
                    self.record(&task_id, old, "failed", Some(&msg));
                }
            }
        }
    }

    fn reports_for(&self, handle: &BackendHandle) -> Vec<TaskReport> {
        let job = &self.jobs[&handle.id];
        let timings = &self.timings[&handle.id];
        job.tasks
            .iter()
            .zip(timings)
            .map(|(task, (started, finished))| TaskReport {
                task_id: task.task_id.clone(),
                stage_id: task.stage_id.clone(),
                part: task.part,
                state: task.state().clone(),
                exit_code: task.exit_code(),
                started_at: *started,
                finished_at: *finished,
            })
            .collect()
    }

    /// Poll until every task of every handle is terminal. Completed tasks
    /// are classified with [`infer_task_status`] on each poll; a timeout
    /// returns an error naming the non-terminal tasks; a backend loss marks
    /// the remaining tasks BackendFailed.
    pub fn wait_all(
        &mut self,
        handles: &[BackendHandle],
        poll_interval: Duration,
        timeout: Duration,
    ) -> Result<BTreeMap<u64, Vec<TaskReport>>, ExecError> {
        let deadline = Instant::now() + timeout;
        loop {
            let mut all_terminal = true;
            for h in handles {
                match self.backend.poll(h) {
                    Ok(polls) => {
                        if !self.apply_poll(h.id, &polls)? {
                            all_terminal = false;
                        }
                    }
                    Err(e) => {
                        self.fail_remaining(handles, FailureKind::BackendFailed, &e.to_string());
                        all_terminal = true;
                        break;
                    }
                }
            }
            if all_terminal {
                return Ok(handles.iter().map(|h| (h.id, self.reports_for(h))).collect());
            }
            if Instant::now() >= deadline {
                let pending: Vec<String> = handles
                    .iter()
                    .filter_map(|h| self.jobs.get(&h.id))
                    .flat_map(|j| j.tasks.iter())
                    .filter(|t| !t.state().is_terminal())
                    .map(|t| t.task_id.clone())
                    .collect();
                return Err(ExecError::Timeout { pending });
            }
            std::thread::sleep(poll_interval);
        }
    }

    /// Run a whole pipeline against this executor's backend. Stages execute
    /// in declared order; scatter stages split the dataset, run one task
    /// per part, and merge the parts back. A stage failure aborts the run:
    /// failed task workdirs are retained for diagnosis, successful ones are
    /// cleaned up either way.
    pub fn run_pipeline(
        &mut self,
        spec: &PipelineSpec,
        dataset: Vec<SequenceRecord>,
        core_budget: u32,
        run_root: &Path,
    ) -> Result<RunResult, ExecError> {
        let violations = crate::pipeline::validate_spec(spec);
        if !violations.is_empty() {
            return Err(ExecError::SpecInvalid(violations));
        }
        if core_budget < 1 {
            return Err(ExecError::InvalidJob("core_budget must be >= 1".to_string()));
        }
        std::fs::create_dir_all(run_root)?;

        // resolve each stage's input source up front; compute which stages'
        // gathered outputs are actually consumed downstream
        let index_of: HashMap<&str, usize> =
            spec.stages.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
        let sources: Vec<Option<usize>> = spec
            .stages
            .iter()
            .enumerate()
            .map(|(i, s)| match &s.input {
                StageInput::Initial => None,
                StageInput::Default => i.checked_sub(1),
                StageInput::Stage(id) => Some(index_of[id.as_str()]),
            })
            .collect();
        let mut consumed = vec![false; spec.stages.len()];
        for src in sources.iter().flatten() {
            consumed[*src] = true;
        }

        let executes = self.backend.executes_commands();
        let mut datasets: Vec<Option<Vec<SequenceRecord>>> = vec![None; spec.stages.len()];
        let mut stages: Vec<StageOutcome> = Vec::with_capacity(spec.stages.len());
        let mut tool_times: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let mut stage_makespans: BTreeMap<String, f64> = BTreeMap::new();

        let finish_metrics = |tool_times: BTreeMap<String, Vec<f64>>,
                              stage_makespans: BTreeMap<String, f64>| RunMetrics {
            run_id: spec.name.clone(),
            core_count: core_budget,
            tool_times,
            stage_makespans,
        };

        for (i, stage) in spec.stages.iter().enumerate() {
            let input: Vec<SequenceRecord> = match sources[i] {
                None => dataset.clone(),
                Some(j) => datasets[j].clone().expect("earlier stage gathered"),
            };
            let budget = match stage.mode {
                ScatterMode::Scatter => core_budget,
                ScatterMode::Single => stage.cores,
            };
            let partitions = match stage.mode {
                ScatterMode::Scatter => split_records(input.clone(), budget as usize)?,
                ScatterMode::Single => {
                    vec![Partition { index: 0, n_parts: 1, records: input.clone() }]
                }
            };
            let n_parts = partitions.len();

            let seq = self.next_submit_seq();
            let job_id = format!("job-{seq:03}-{}", stage.id);
            let job =
                plan_stage_tasks(stage, &partitions, budget, run_root, &job_id, &self.opts.user.clone(), seq)?;
            let wall_start = Instant::now();
            let handle = self.submit_job(job)?;

            let wait = self.wait_all(
                std::slice::from_ref(&handle),
                self.opts.poll_interval,
                self.opts.timeout,
            );
            let reports = match wait {
                Ok(mut map) => map.remove(&handle.id).expect("reports for handle"),
                Err(ExecError::Timeout { .. }) => {
                    let _ = self.backend.cancel(&handle);
                    self.fail_remaining(
                        std::slice::from_ref(&handle),
                        FailureKind::Timeout,
                        &format!("not terminal after {:?}", self.opts.timeout),
                    );
                    self.reports_for(&handle)
                }
                Err(e) => return Err(e),
            };
            let wall_s = wall_start.elapsed().as_secs_f64();

            // save results and clean up workdirs for successful tasks;
            // failed tasks keep their workdirs for diagnosis
            let mut saved_outputs = Vec::new();
            let mut failures: Vec<(String, FailureReason)> = Vec::new();
            for report in &reports {
                match &report.state {
                    TaskState::Succeeded => {
                        let task = self.task_of(&handle, &report.task_id);
                        let dest =
                            run_root.join(&stage.id).join("out").join(format!("part_{}", part_label(report)));
                        std::fs::create_dir_all(&dest)?;
                        for out in &task.expected_outputs {
                            let name = out.file_name().expect("output file name");
                            let target = dest.join(name);
                            move_file(out, &target)?;
                            saved_outputs.push(target);
                        }
                        std::fs::remove_dir_all(&task.workdir)?;
                    }
                    TaskState::Failed(reason) => {
                        failures.push((report.task_id.clone(), reason.clone()));
                    }
                    other => {
                        failures.push((
                            report.task_id.clone(),
                            FailureReason {
                                kind: FailureKind::BackendFailed,
                                detail: format!("non-terminal state {} after wait", other.label()),
                            },
                        ));
                    }
                }
            }

            let durations: Vec<f64> = reports.iter().filter_map(|r| r.duration_s()).collect();
            let makespan = stage_makespan(&reports).unwrap_or(wall_s);
            tool_times.insert(stage.id.clone(), durations);
            stage_makespans.insert(stage.id.clone(), makespan);

            let mut outcome = StageOutcome {
                stage_id: stage.id.clone(),
                reports,
                makespan_s: makespan,
                saved_outputs,
                gathered: None,
            };

            if !failures.is_empty() {
                stages.push(outcome);
                return Err(ExecError::StageFailed {
                    stage_id: stage.id.clone(),
                    failures,
                    completed: Box::new(RunResult {
                        run_root: run_root.to_path_buf(),
                        stages,
                        metrics: finish_metrics(tool_times, stage_makespans),
                    }),
                });
            }

            if consumed[i] {
                if executes {
                    let (records, gathered_path) =
                        self.gather_stage(spec, stage, run_root, n_parts)?;
                    outcome.gathered = Some(gathered_path);
                    datasets[i] = Some(records);
                } else {
                    // simulated tools do not transform data
                    datasets[i] = Some(input);
                }
            }
            stages.push(outcome);
        }

        Ok(RunResult {
            run_root: run_root.to_path_buf(),
            stages,
            metrics: finish_metrics(tool_times, stage_makespans),
        })
    }

    fn task_of(&self, handle: &BackendHandle, task_id: &str) -> &Task {
        self.jobs[&handle.id]
            .tasks
            .iter()
            .find(|t| t.task_id == task_id)
            .expect("task in job store")
    }

    /// Parse each part's saved primary output and interleave them back into
    /// one dataset, written alongside the stage's results.
    fn gather_stage(
        &self,
        _spec: &PipelineSpec,
        stage: &StageSpec,
        run_root: &Path,
        n_parts: usize,
    ) -> Result<(Vec<SequenceRecord>, PathBuf), ExecError> {
        let mut parts = Vec::with_capacity(n_parts);
        for k in 0..n_parts {
            let part_vars: BTreeMap<&str, Option<String>> = [(
                "part",
                match stage.mode {
                    ScatterMode::Scatter => Some(k.to_string()),
                    ScatterMode::Single => None,
                },
            )]
            .into_iter()
            .collect();
            let primary = expand_template(&stage.outputs[0], &part_vars, &stage.id)?;
            let name = Path::new(&primary)
                .file_name()
                .ok_or_else(|| ExecError::GatherFailed {
                    stage: stage.id.clone(),
                    msg: format!("primary output {primary:?} has no file name"),
                })?
                .to_owned();
            let label = match stage.mode {
                ScatterMode::Scatter => k.to_string(),
                ScatterMode::Single => "single".to_string(),
            };
            let path = run_root.join(&stage.id).join("out").join(format!("part_{label}")).join(name);
            let format = SeqFormat::from_extension(&path).unwrap_or(SeqFormat::Fasta);
            let file = std::fs::File::open(&path).map_err(|e| ExecError::GatherFailed {
                stage: stage.id.clone(),
                msg: format!("cannot open {}: {e}", path.display()),
            })?;
            let records =
                read_records(std::io::BufReader::new(file), format).map_err(|e| ExecError::GatherFailed {
                    stage: stage.id.clone(),
                    msg: format!("cannot parse {}: {e}", path.display()),
                })?;
            parts.push(Partition { index: k, n_parts, records });
        }
        let records = merge_parts(parts)?;
        let format = if records.iter().all(|r| r.quality.is_some()) {
            SeqFormat::Fastq
        } else {
            SeqFormat::Fasta
        };
        let gathered = run_root.join(&stage.id).join(format!("gathered.{}", format.extension()));
        let file = std::fs::File::create(&gathered)?;
        write_records(&records, format, std::io::BufWriter::new(file))?;
        Ok((records, gathered))
    }
}

fn part_label(report: &TaskReport) -> String {
    match report.part {
        Some(k) => k.to_string(),
        None => "single".to_string(),
    }
}

fn stage_makespan(reports: &[TaskReport]) -> Option<f64> {
    let mut min_start = f64::INFINITY;
    let mut max_finish = f64::NEG_INFINITY;
    for r in reports {
        let (s, f) = (r.started_at?, r.finished_at?);
        min_start = min_start.min(s);
        max_finish = max_finish.max(f);
    }
    if reports.is_empty() {
        None
    } else {
        Some(max_finish - min_start)
    }
}

fn move_file(src: &Path, dest: &Path) -> std::io::Result<()> {
    match std::fs::rename(src, dest) {
        Ok(()) => Ok(()),
        Err(_) => {
            std::fs::copy(src, dest)?;
            std::fs::remove_file(src)
        }
    }
}
