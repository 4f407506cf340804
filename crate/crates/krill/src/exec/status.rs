//! Success/failure inference. The generated tool scripts cannot be trusted
//! to report failure themselves, so status is inferred from the cheapest,
//! most reliable signals first: backend verdict, exit code, output-file
//! existence, then log scanning.

use regex::Regex;

use super::{BackendTaskState, FailureKind, FailureReason, LogProbe, OutputProbe, Task, TaskState};

/// Patterns treated as fatal when found in a task's logs. Case-sensitive.
pub fn default_error_patterns() -> Vec<Regex> {
    ["ERROR", "FATAL", "Segmentation fault"]
        .iter()
        .map(|p| Regex::new(p).expect("static pattern"))
        .collect()
}

/// Classify one task. Total over its inputs: Queued/Running pass through
/// unchanged; for a Done backend verdict the precedence is
/// (1) backend Failed, (2) nonzero exit, (3) missing expected output,
/// (4) error pattern in logs, else Succeeded. Exactly one reason is
/// reported per failure.
pub fn infer_task_status(
    task: &Task,
    fs_view: &dyn OutputProbe,
    log_view: &dyn LogProbe,
    backend_state: BackendTaskState,
    exit_code: Option<i32>,
    error_patterns: &[Regex],
) -> TaskState {
    match backend_state {
        BackendTaskState::Queued => return TaskState::Queued,
        BackendTaskState::Running => return TaskState::Running,
        BackendTaskState::Failed => {
            return TaskState::Failed(FailureReason {
                kind: FailureKind::BackendFailed,
                detail: "backend reported failure".to_string(),
            })
        }
        BackendTaskState::Done => {}
    }

    match exit_code {
        Some(0) => {}
        Some(code) => {
            return TaskState::Failed(FailureReason {
                kind: FailureKind::NonzeroExit,
                detail: format!("exit code {code}"),
            })
        }
        None => {
            return TaskState::Failed(FailureReason {
                kind: FailureKind::NonzeroExit,
                detail: "no exit code reported".to_string(),
            })
        }
    }

    for out in &task.expected_outputs {
        if !fs_view.exists(out) {
            return TaskState::Failed(FailureReason {
                kind: FailureKind::MissingOutput,
                detail: format!("expected output missing: {}", out.display()),
            });
        }
    }

    let fallback;
    let patterns = if error_patterns.is_empty() {
        fallback = default_error_patterns();
        &fallback
    } else {
        error_patterns
    };
    for line in log_view.lines(&task.log_globs) {
        if let Some(p) = patterns.iter().find(|p| p.is_match(&line)) {
            return TaskState::Failed(FailureReason {
                kind: FailureKind::LogError,
                detail: format!("log line matched {:?}: {line}", p.as_str()),
            });
        }
    }

    TaskState::Succeeded
}

#[cfg(test)]
mod tests {
    use std::path::{Path, PathBuf};

    use super::*;

    pub struct FakeFs {
        pub missing: Vec<PathBuf>,
    }

    impl OutputProbe for FakeFs {
        fn exists(&self, path: &Path) -> bool {
            !self.missing.contains(&path.to_path_buf())
        }
    }

    pub struct FakeLogs {
        pub lines: Vec<String>,
    }

    impl LogProbe for FakeLogs {
        fn lines(&self, _globs: &[String]) -> Vec<String> {
            self.lines.clone()
        }
    }

    fn task() -> Task {
        Task::new(
            "t0",
            "s",
            None,
            "true",
            PathBuf::from("/w"),
            vec![PathBuf::from("/w/a.out"), PathBuf::from("/w/b.out")],
            vec!["/w/*.log".to_string()],
            1.0,
        )
        .unwrap()
    }

    fn infer(
        backend: BackendTaskState,
        exit: Option<i32>,
        missing: Vec<PathBuf>,
        lines: Vec<String>,
    ) -> TaskState {
        infer_task_status(
            &task(),
            &FakeFs { missing },
            &FakeLogs { lines },
            backend,
            exit,
            &default_error_patterns(),
        )
    }

    #[test]
    fn success_path() {
        let st = infer(BackendTaskState::Done, Some(0), vec![], vec!["all good".into()]);
        assert_eq!(st, TaskState::Succeeded);
    }

    #[test]
    fn missing_output_beats_log_error() {
        let st = infer(
            BackendTaskState::Done,
            Some(0),
            vec![PathBuf::from("/w/b.out")],
            vec!["FATAL: db not found".into()],
        );
        match st {
            TaskState::Failed(r) => {
                assert_eq!(r.kind, FailureKind::MissingOutput);
                assert!(r.detail.contains("b.out"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn log_error_detected_with_default_patterns() {
        let st = infer(BackendTaskState::Done, Some(0), vec![], vec!["FATAL: db not found".into()]);
        assert!(matches!(st, TaskState::Failed(r) if r.kind == FailureKind::LogError));
    }

    #[test]
    fn queued_and_running_pass_through() {
        assert_eq!(infer(BackendTaskState::Queued, None, vec![], vec![]), TaskState::Queued);
        assert_eq!(infer(BackendTaskState::Running, None, vec![], vec![]), TaskState::Running);
    }

    #[test]
    fn case_sensitivity_of_defaults() {
        let st = infer(BackendTaskState::Done, Some(0), vec![], vec!["this error is lowercase".into()]);
        assert_eq!(st, TaskState::Succeeded);
    }

    #[test]
    fn empty_patterns_fall_back_to_defaults() {
        let st = infer_task_status(
            &task(),
            &FakeFs { missing: vec![] },
            &FakeLogs { lines: vec!["ERROR boom".into()] },
            BackendTaskState::Done,
            Some(0),
            &[],
        );
        assert!(matches!(st, TaskState::Failed(r) if r.kind == FailureKind::LogError));
    }

    #[test]
    fn full_sixteen_case_matrix() {
        // (backend, exit, outputs, logs) -> expected precedence winner
        for backend_failed in [false, true] {
            for exit_bad in [false, true] {
                for output_missing in [false, true] {
                    for log_error in [false, true] {
                        let backend =
                            if backend_failed { BackendTaskState::Failed } else { BackendTaskState::Done };
                        let exit = if exit_bad { Some(2) } else { Some(0) };
                        let missing = if output_missing { vec![PathBuf::from("/w/a.out")] } else { vec![] };
                        let lines = if log_error {
                            vec!["ERROR something broke".to_string()]
                        } else {
                            vec!["fine".to_string()]
                        };
                        let st = infer(backend, exit, missing, lines);
                        let expected = if backend_failed {
                            Some(FailureKind::BackendFailed)
                        } else if exit_bad {
                            Some(FailureKind::NonzeroExit)
                        } else if output_missing {
                            Some(FailureKind::MissingOutput)
                        } else if log_error {
                            Some(FailureKind::LogError)
                        } else {
                            None
                        };
                        match (st, expected) {
                            (TaskState::Succeeded, None) => {}
                            (TaskState::Failed(r), Some(k)) => assert_eq!(r.kind, k),
                            (got, want) => panic!("case ({backend_failed},{exit_bad},{output_missing},{log_error}): got {got:?}, want {want:?}"),
                        }
                    }
                }
            }
        }
    }
}
