//! Deterministic run reports: human-readable text plus a machine-readable
//! JSON document, and a flat (tool, percent) TSV.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::metrics::{BreakdownReport, RunMetrics, SpeedupRow};
use crate::sim::{JobSummary, SimClusterConfig, SimEvent, SimEventKind};
use crate::util::fmt_f64;

/// Per-node task timing, present when the source cluster had slowdown > 1
/// nodes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StragglerNode {
    pub node_id: String,
    pub slowdown: f64,
    pub tasks: usize,
    pub median_task_s: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct RunReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runs: Option<Vec<RunMetrics>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub breakdown: Option<BreakdownReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub speedups: Option<Vec<SpeedupRow>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stragglers: Option<Vec<StragglerNode>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jobs: Option<Vec<JobSummary>>,
}

impl RunReport {
    pub fn is_empty(&self) -> bool {
        self.runs.is_none()
            && self.breakdown.is_none()
            && self.speedups.is_none()
            && self.stragglers.is_none()
            && self.jobs.is_none()
    }
}

/// Per-node task durations from a trace; `Some` iff the cluster has any
/// straggler (slowdown > 1) node.
pub fn straggler_nodes(config: &SimClusterConfig, trace: &[SimEvent]) -> Option<Vec<StragglerNode>> {
    if !config.has_stragglers() {
        return None;
    }
    let mut started: BTreeMap<(String, usize), f64> = BTreeMap::new();
    let mut durations: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for e in trace {
        match e.kind {
            SimEventKind::TaskStarted => {
                if let Some(task) = e.task {
                    started.insert((e.job.clone(), task), e.t);
                }
            }
            SimEventKind::TaskFinished => {
                if let (Some(task), Some(node)) = (e.task, e.node.as_ref()) {
                    if let Some(t0) = started.get(&(e.job.clone(), task)) {
                        durations.entry(node.clone()).or_default().push(e.t - t0);
                    }
                }
            }
            _ => {}
        }
    }
    Some(
        config
            .nodes
            .iter()
            .map(|n| {
                let times = durations.get(&n.node_id).cloned().unwrap_or_default();
                StragglerNode {
                    node_id: n.node_id.clone(),
                    slowdown: n.slowdown,
                    tasks: times.len(),
                    median_task_s: if times.is_empty() { 0.0 } else { crate::metrics::median(&times) },
                }
            })
            .collect(),
    )
}

/// Render the text report. Sections with no data are omitted; ordering is
/// deterministic (tools alphabetical, core counts ascending).
pub fn write_run_report(report: &RunReport, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "run report")?;
    writeln!(out, "==========")?;
    if let Some(runs) = &report.runs {
        writeln!(out)?;
        writeln!(out, "runs")?;
        writeln!(out, "----")?;
        for r in runs {
            writeln!(
                out,
                "{}  cores={}  makespan={} s",
                r.run_id,
                r.core_count,
                fmt_f64(r.run_makespan())
            )?;
        }
    }
    if let Some(b) = &report.breakdown {
        writeln!(out)?;
        writeln!(out, "execution time breakdown (percent of per-tool medians across runs)")?;
        writeln!(out, "-------------------------------------------------------------------")?;
        for (tool, t) in &b.tools {
            writeln!(out, "{tool}\t{} s\t{} %", fmt_f64(t.median_time_s), fmt_f64(t.percent))?;
        }
        writeln!(out, "total\t\t{} %", fmt_f64(b.total_percent))?;
    }
    if let Some(rows) = &report.speedups {
        writeln!(out)?;
        writeln!(out, "speedup (reference: smallest core count)")?;
        writeln!(out, "----------------------------------------")?;
        writeln!(out, "cores\tmakespan_s\tspeedup\tefficiency")?;
        for r in rows {
            writeln!(
                out,
                "{}\t{}\t{}\t{}",
                r.cores,
                fmt_f64(r.makespan_s),
                fmt_f64(r.speedup),
                fmt_f64(r.efficiency)
            )?;
        }
    }
    if let Some(nodes) = &report.stragglers {
        writeln!(out)?;
        writeln!(out, "straggler nodes (per-node median task time)")?;
        writeln!(out, "-------------------------------------------")?;
        writeln!(out, "node\tslowdown\ttasks\tmedian_task_s")?;
        for n in nodes {
            writeln!(
                out,
                "{}\t{}\t{}\t{}",
                n.node_id,
                fmt_f64(n.slowdown),
                n.tasks,
                fmt_f64(n.median_task_s)
            )?;
        }
    }
    if let Some(jobs) = &report.jobs {
        writeln!(out)?;
        writeln!(out, "jobs")?;
        writeln!(out, "----")?;
        writeln!(out, "job\tcores\ttasks\twait_s\texec_s\tturnaround_s")?;
        for j in jobs {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                j.job_id,
                j.requested_cores,
                j.n_tasks,
                fmt_f64(j.wait_s),
                fmt_f64(j.exec_s),
                fmt_f64(j.turnaround_s)
            )?;
        }
    }
    Ok(())
}

/// Machine-readable form of the same report.
pub fn write_run_report_json(report: &RunReport, mut out: impl Write) -> std::io::Result<()> {
    serde_json::to_writer_pretty(&mut out, report)?;
    writeln!(out)?;
    Ok(())
}

/// Flat `tool<TAB>percent` rows for plotting.
pub fn write_breakdown_tsv(breakdown: &BreakdownReport, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "#tool\tmedian_time_s\tpercent")?;
    for (tool, t) in &breakdown.tools {
        writeln!(out, "{tool}\t{}\t{}", fmt_f64(t.median_time_s), fmt_f64(t.percent))?;
    }
    Ok(())
}
