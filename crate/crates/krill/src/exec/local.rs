//! Local execution backend: a fixed pool of worker threads running task
//! commands through `sh -c` in their workdirs, command output captured to
//! `task.log`.

use std::collections::{HashMap, HashSet};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{SystemTime, UNIX_EPOCH};

use super::{Backend, BackendHandle, BackendTaskState, ExecError, JobSubmission, TaskPoll};

struct WorkItem {
    handle: u64,
    index: usize,
    command: String,
    workdir: PathBuf,
}

#[derive(Clone, Copy)]
struct TaskSlot {
    state: BackendTaskState,
    exit_code: Option<i32>,
    started_at: Option<f64>,
    finished_at: Option<f64>,
}

impl TaskSlot {
    fn queued() -> Self {
        TaskSlot { state: BackendTaskState::Queued, exit_code: None, started_at: None, finished_at: None }
    }
}

#[derive(Default)]
struct State {
    jobs: HashMap<u64, Vec<TaskSlot>>,
    cancelled: HashSet<u64>,
}

pub struct LocalBackend {
    workers: u32,
    state: Arc<Mutex<State>>,
    tx: Option<mpsc::Sender<WorkItem>>,
    threads: Vec<JoinHandle<()>>,
    next_handle: u64,
}

fn now_s() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

impl LocalBackend {
    /// A pool of `workers` OS threads; capacity equals the worker count.
    pub fn new(workers: u32) -> Self {
        let workers = workers.max(1);
        let state: Arc<Mutex<State>> = Arc::default();
        let (tx, rx) = mpsc::channel::<WorkItem>();
        let rx = Arc::new(Mutex::new(rx));
        let mut threads = Vec::with_capacity(workers as usize);
        for _ in 0..workers {
            let rx = Arc::clone(&rx);
            let state = Arc::clone(&state);
            threads.push(std::thread::spawn(move || loop {
                let item = {
                    let guard = rx.lock().expect("worker receiver");
                    guard.recv()
                };
                let Ok(item) = item else { return };
                run_item(&state, item);
            }));
        }
        LocalBackend { workers, state, tx: Some(tx), threads, next_handle: 0 }
    }
}

fn run_item(state: &Arc<Mutex<State>>, item: WorkItem) {
    {
        let mut st = state.lock().expect("state");
        if st.cancelled.contains(&item.handle) {
            return; // slot already marked Failed by cancel()
        }
        let slot = &mut st.jobs.get_mut(&item.handle).expect("job slots")[item.index];
        slot.state = BackendTaskState::Running;
        slot.started_at = Some(now_s());
    }

    let log_path = item.workdir.join("task.log");
    let result = std::fs::File::create(&log_path).and_then(|log| {
        let log_err = log.try_clone()?;
        Command::new("sh")
            .arg("-c")
            .arg(&item.command)
            .current_dir(&item.workdir)
            .stdin(Stdio::null())
            .stdout(Stdio::from(log))
            .stderr(Stdio::from(log_err))
            .status()
    });

    let mut st = state.lock().expect("state");
    let slot = &mut st.jobs.get_mut(&item.handle).expect("job slots")[item.index];
    slot.finished_at = Some(now_s());
    match result {
        Ok(status) => {
            slot.state = BackendTaskState::Done;
            slot.exit_code = status.code(); // None when killed by a signal
        }
        Err(_) => {
            slot.state = BackendTaskState::Failed;
        }
    }
}

impl Backend for LocalBackend {
    fn capacity(&self) -> u32 {
        self.workers
    }

    fn submit(&mut self, job: JobSubmission) -> Result<BackendHandle, ExecError> {
        if job.requested_cores > self.workers {
            return Err(ExecError::CapacityExceeded {
                requested: job.requested_cores,
                capacity: self.workers,
            });
        }
        let tx = self
            .tx
            .as_ref()
            .ok_or_else(|| ExecError::BackendUnavailable("worker pool shut down".to_string()))?;
        self.next_handle += 1;
        let handle = BackendHandle { id: self.next_handle, job_id: job.job_id.clone() };
        {
            let mut st = self.state.lock().expect("state");
            st.jobs.insert(handle.id, vec![TaskSlot::queued(); job.tasks.len()]);
        }
        for (index, task) in job.tasks.iter().enumerate() {
            tx.send(WorkItem {
                handle: handle.id,
                index,
                command: task.command.clone(),
                workdir: task.workdir.clone(),
            })
            .map_err(|_| ExecError::BackendUnavailable("worker pool shut down".to_string()))?;
        }
        Ok(handle)
    }

    fn poll(&mut self, handle: &BackendHandle) -> Result<Vec<TaskPoll>, ExecError> {
        let st = self.state.lock().expect("state");
        let slots = st.jobs.get(&handle.id).ok_or(ExecError::UnknownHandle(handle.id))?;
        Ok(slots
            .iter()
            .map(|s| TaskPoll {
                state: s.state,
                exit_code: s.exit_code,
                started_at: s.started_at,
                finished_at: s.finished_at,
            })
            .collect())
    }

    fn cancel(&mut self, handle: &BackendHandle) -> Result<(), ExecError> {
        let mut st = self.state.lock().expect("state");
        if !st.jobs.contains_key(&handle.id) {
            return Err(ExecError::UnknownHandle(handle.id));
        }
        st.cancelled.insert(handle.id);
        // not-yet-started tasks are dropped; running ones finish on their own
        let slots = st.jobs.get_mut(&handle.id).expect("job slots");
        for slot in slots.iter_mut() {
            if slot.state == BackendTaskState::Queued {
                slot.state = BackendTaskState::Failed;
            }
        }
        Ok(())
    }
}

impl Drop for LocalBackend {
    fn drop(&mut self) {
        self.tx.take(); // closes the channel, workers exit
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Task;
    use std::time::Duration;

    fn job_of(commands: &[&str], dir: &std::path::Path, cores: u32) -> JobSubmission {
        let tasks: Vec<Task> = commands
            .iter()
            .enumerate()
            .map(|(i, cmd)| {
                let workdir = dir.join(format!("t{i}"));
                std::fs::create_dir_all(&workdir).unwrap();
                Task::new(
                    format!("t{i}"),
                    "stage",
                    Some(i),
                    *cmd,
                    workdir.clone(),
                    vec![workdir.join("out.txt")],
                    vec![workdir.join("*.log").to_string_lossy().into_owned()],
                    1.0,
                )
                .unwrap()
            })
            .collect();
        JobSubmission::new("job-1", "tester", cores, tasks, 1).unwrap()
    }

    fn wait_done(backend: &mut LocalBackend, handle: &BackendHandle) -> Vec<TaskPoll> {
        for _ in 0..1000 {
            let polls = backend.poll(handle).unwrap();
            if polls.iter().all(|p| matches!(p.state, BackendTaskState::Done | BackendTaskState::Failed))
            {
                return polls;
            }
            std::thread::sleep(Duration::from_millis(5));
        }
        panic!("tasks never finished");
    }

    #[test]
    fn runs_commands_and_reports_exit_codes() {
        let dir = tempfile::tempdir().unwrap();
        let mut backend = LocalBackend::new(2);
        let job = job_of(&["echo hi > out.txt", "exit 3"], dir.path(), 2);
        let handle = backend.submit(job).unwrap();
        let polls = wait_done(&mut backend, &handle);
        assert_eq!(polls[0].exit_code, Some(0));
        assert_eq!(polls[1].exit_code, Some(3));
        assert!(dir.path().join("t0/out.txt").exists());
        assert!(polls[0].started_at.unwrap() <= polls[0].finished_at.unwrap());
    }

    #[test]
    fn capacity_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let mut backend = LocalBackend::new(2);
        let job = job_of(&["true"], dir.path(), 3);
        assert!(matches!(backend.submit(job), Err(ExecError::CapacityExceeded { .. })));
    }

    #[test]
    fn stdout_and_stderr_captured_in_task_log() {
        let dir = tempfile::tempdir().unwrap();
        let mut backend = LocalBackend::new(1);
        let job = job_of(&["echo to-stdout; echo to-stderr >&2"], dir.path(), 1);
        let handle = backend.submit(job).unwrap();
        wait_done(&mut backend, &handle);
        let log = std::fs::read_to_string(dir.path().join("t0/task.log")).unwrap();
        assert!(log.contains("to-stdout"));
        assert!(log.contains("to-stderr"));
    }

    #[test]
    fn distinct_handles_for_distinct_jobs() {
        let dir = tempfile::tempdir().unwrap();
        let mut backend = LocalBackend::new(1);
        let h1 = backend.submit(job_of(&["true"], dir.path().join("a").as_path(), 1)).unwrap();
        let h2 = backend.submit(job_of(&["true"], dir.path().join("b").as_path(), 1)).unwrap();
        assert_ne!(h1.id, h2.id);
        wait_done(&mut backend, &h1);
        wait_done(&mut backend, &h2);
    }

    #[test]
    fn cancel_fails_queued_tasks() {
        let dir = tempfile::tempdir().unwrap();
        let mut backend = LocalBackend::new(1);
        // one slow task hogs the single worker; the rest stay queued
        let job = job_of(&["sleep 1", "true", "true"], dir.path(), 1);
        let handle = backend.submit(job).unwrap();
        std::thread::sleep(Duration::from_millis(50));
        backend.cancel(&handle).unwrap();
        let polls = backend.poll(&handle).unwrap();
        assert!(polls[1..].iter().all(|p| p.state == BackendTaskState::Failed));
    }
}
