//! Scenario files: a TOML document describing a cluster and a job list,
//! plus the trace/summary writers used by the `simulate` command.
//!
//! ```toml
//! seed = 42
//! jitter = 0.0
//!
//! [[node]]
//! id = "n1"          # optional, default "node<i>"
//! cores = 2
//! slowdown = 1.0     # optional, default 1.0
//!
//! [[job]]
//! id = "j1"          # optional, default "job<i>"
//! user = "u1"        # optional, default "local"
//! cores = 2
//! tasks = 4          # with base_time_s, or give task_times explicitly
//! base_time_s = 10.0
//! arrival = 0.0      # optional, default 0.0
//! ```

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{
    build_cluster, job_makespan, SimCluster, SimClusterConfig, SimError, SimEvent, SimJob, SimNode,
    Until,
};
use crate::util::fmt_f64;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    jitter: f64,
    #[serde(rename = "node")]
    nodes: Vec<RawNode>,
    #[serde(rename = "job", default)]
    jobs: Vec<RawJob>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    #[serde(default)]
    id: Option<String>,
    cores: u32,
    #[serde(default = "default_slowdown")]
    slowdown: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawJob {
    #[serde(default)]
    id: Option<String>,
    #[serde(default = "default_user")]
    user: String,
    cores: u32,
    #[serde(default)]
    tasks: Option<usize>,
    #[serde(default)]
    base_time_s: Option<f64>,
    #[serde(default)]
    task_times: Option<Vec<f64>>,
    #[serde(default)]
    arrival: f64,
}

fn default_slowdown() -> f64 {
    1.0
}

fn default_user() -> String {
    "local".to_string()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioJob {
    pub job: SimJob,
    pub arrival: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub cluster: SimClusterConfig,
    pub jobs: Vec<ScenarioJob>,
}

fn nodes_from_raw(nodes: Vec<RawNode>) -> Vec<SimNode> {
    nodes
        .into_iter()
        .enumerate()
        .map(|(i, n)| SimNode {
            node_id: n.id.unwrap_or_else(|| format!("node{i}")),
            cores: n.cores,
            slowdown: n.slowdown,
        })
        .collect()
}

/// Parse a full scenario (cluster + jobs).
pub fn parse_scenario(text: &str) -> Result<Scenario, SimError> {
    let raw: RawScenario = toml::from_str(text).map_err(|e| SimError::Scenario(e.to_string()))?;
    let cluster = SimClusterConfig {
        nodes: nodes_from_raw(raw.nodes),
        seed: raw.seed,
        service_time_jitter: raw.jitter,
    };
    cluster.validate()?;
    let mut jobs = Vec::with_capacity(raw.jobs.len());
    for (i, j) in raw.jobs.into_iter().enumerate() {
        let job_id = j.id.unwrap_or_else(|| format!("job{i}"));
        let task_times = match (j.task_times, j.tasks, j.base_time_s) {
            (Some(times), None, None) => times,
            (None, Some(n), base) => vec![base.unwrap_or(1.0); n],
            (None, None, _) => {
                return Err(SimError::Scenario(format!(
                    "job {job_id:?}: give either task_times or tasks (+ base_time_s)"
                )))
            }
            (Some(_), _, _) => {
                return Err(SimError::Scenario(format!(
                    "job {job_id:?}: task_times conflicts with tasks/base_time_s"
                )))
            }
        };
        jobs.push(ScenarioJob {
            job: SimJob { job_id, user: j.user, requested_cores: j.cores, task_times },
            arrival: j.arrival,
        });
    }
    Ok(Scenario { cluster, jobs })
}

/// Parse a cluster-only document (the `--cluster` flag of `run`): same
/// grammar, jobs ignored if present.
pub fn parse_cluster_config(text: &str) -> Result<SimClusterConfig, SimError> {
    Ok(parse_scenario(text)?.cluster)
}

/// Per-job timing summary derived from a finished trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JobSummary {
    pub job_id: String,
    pub user: String,
    pub requested_cores: u32,
    pub n_tasks: usize,
    pub queued_at: f64,
    pub started_at: f64,
    pub finished_at: f64,
    pub wait_s: f64,
    pub exec_s: f64,
    pub turnaround_s: f64,
}

pub struct ScenarioRun {
    pub cluster: SimCluster,
    pub trace: Vec<SimEvent>,
    pub summaries: Vec<JobSummary>,
}

/// Build the cluster, enqueue every job at its arrival time (submission
/// order = arrival order), and run to quiescence.
pub fn run_scenario(scenario: &Scenario) -> Result<ScenarioRun, SimError> {
    let mut cluster = build_cluster(scenario.cluster.clone())?;
    let mut order: Vec<usize> = (0..scenario.jobs.len()).collect();
    order.sort_by(|a, b| {
        scenario.jobs[*a].arrival.total_cmp(&scenario.jobs[*b].arrival).then(a.cmp(b))
    });
    for i in &order {
        let sj = &scenario.jobs[*i];
        cluster.enqueue_job(sj.job.clone(), sj.arrival)?;
    }
    cluster.advance(Until::Quiescent);
    let trace = cluster.trace().to_vec();

    let mut summaries = Vec::with_capacity(order.len());
    for i in order {
        let sj = &scenario.jobs[i];
        let m = job_makespan(&trace, &sj.job.job_id)?;
        summaries.push(JobSummary {
            job_id: sj.job.job_id.clone(),
            user: sj.job.user.clone(),
            requested_cores: sj.job.requested_cores,
            n_tasks: sj.job.task_times.len(),
            queued_at: sj.arrival,
            started_at: sj.arrival + m.wait_s,
            finished_at: sj.arrival + m.turnaround_s,
            wait_s: m.wait_s,
            exec_s: m.exec_s,
            turnaround_s: m.turnaround_s,
        });
    }
    Ok(ScenarioRun { cluster, trace, summaries })
}

/// One JSON document per event.
pub fn write_trace_jsonl(trace: &[SimEvent], mut out: impl Write) -> std::io::Result<()> {
    for e in trace {
        serde_json::to_writer(&mut out, e)?;
        writeln!(out)?;
    }
    Ok(())
}

/// Tab-separated per-job summary.
pub fn write_summary_tsv(summaries: &[JobSummary], mut out: impl Write) -> std::io::Result<()> {
    writeln!(
        out,
        "#job_id\tuser\tcores\tn_tasks\tqueued_at\tstarted_at\tfinished_at\twait_s\texec_s\tturnaround_s"
    )?;
    for s in summaries {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            s.job_id,
            s.user,
            s.requested_cores,
            s.n_tasks,
            fmt_f64(s.queued_at),
            fmt_f64(s.started_at),
            fmt_f64(s.finished_at),
            fmt_f64(s.wait_s),
            fmt_f64(s.exec_s),
            fmt_f64(s.turnaround_s)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCENARIO: &str = r#"
seed = 7
jitter = 0.0

[[node]]
id = "n1"
cores = 2

[[node]]
id = "n2"
cores = 2
slowdown = 3.0

[[job]]
id = "j1"
user = "u1"
cores = 4
tasks = 4
base_time_s = 10.0
"#;

    #[test]
    fn parse_and_run() {
        let sc = parse_scenario(SCENARIO).unwrap();
        assert_eq!(sc.cluster.capacity(), 4);
        assert!(sc.cluster.has_stragglers());
        let run = run_scenario(&sc).unwrap();
        assert_eq!(run.summaries.len(), 1);
        assert_eq!(run.summaries[0].exec_s, 30.0);
        assert_eq!(run.summaries[0].wait_s, 0.0);
    }

    #[test]
    fn task_times_and_tasks_are_mutually_exclusive() {
        let bad = "seed = 1\n[[node]]\ncores = 1\n[[job]]\ncores = 1\ntasks = 2\ntask_times = [1.0]\n";
        assert!(parse_scenario(bad).is_err());
        let none = "seed = 1\n[[node]]\ncores = 1\n[[job]]\ncores = 1\n";
        assert!(parse_scenario(none).is_err());
    }

    #[test]
    fn defaults_applied() {
        let sc = parse_scenario("[[node]]\ncores = 3\n[[job]]\ncores = 1\ntask_times = [2.5]\n").unwrap();
        assert_eq!(sc.cluster.nodes[0].node_id, "node0");
        assert_eq!(sc.cluster.nodes[0].slowdown, 1.0);
        assert_eq!(sc.jobs[0].job.job_id, "job0");
        assert_eq!(sc.jobs[0].job.user, "local");
        assert_eq!(sc.jobs[0].arrival, 0.0);
    }

    #[test]
    fn trace_jsonl_is_deterministic() {
        let sc = parse_scenario(SCENARIO).unwrap();
        let mut bufs = Vec::new();
        for _ in 0..2 {
            let run = run_scenario(&sc).unwrap();
            let mut buf = Vec::new();
            write_trace_jsonl(&run.trace, &mut buf).unwrap();
            bufs.push(buf);
        }
        assert_eq!(bufs[0], bufs[1]);
        assert!(!bufs[0].is_empty());
    }

    #[test]
    fn summary_tsv_shape() {
        let sc = parse_scenario(SCENARIO).unwrap();
        let run = run_scenario(&sc).unwrap();
        let mut buf = Vec::new();
        write_summary_tsv(&run.summaries, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1].split('\t').count(), 10);
        assert!(lines[1].starts_with("j1\tu1\t4\t4\t"));
    }
}
