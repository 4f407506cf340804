//! Run measurements and the median-of-runs methodology: per-tool time
//! breakdowns and speedup/efficiency tables across core counts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no runs supplied")]
    EmptyRuns,
    #[error("run {run_id:?} has a different tool set than the first run")]
    ToolSetMismatch { run_id: String },
    #[error("all tool medians are zero; percentages are undefined")]
    AllZeroTimes,
    #[error("speedup table needs at least two distinct core counts")]
    SingleCoreGroup,
}

/// What one pipeline run measured: per-tool task wall times (seconds;
/// virtual seconds for simulated runs) and per-stage makespans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub run_id: String,
    pub core_count: u32,
    pub tool_times: BTreeMap<String, Vec<f64>>,
    pub stage_makespans: BTreeMap<String, f64>,
}

impl RunMetrics {
    /// Total time a tool's tasks spent in this run.
    pub fn tool_total(&self, tool: &str) -> f64 {
        self.tool_times.get(tool).map(|v| v.iter().sum()).unwrap_or(0.0)
    }

    /// The run's makespan: stage makespans summed over the (sequential)
    /// stages.
    pub fn run_makespan(&self) -> f64 {
        self.stage_makespans.values().sum()
    }
}

/// Median of a non-empty slice; even counts average the middle two.
pub fn median(values: &[f64]) -> f64 {
    debug_assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolBreakdown {
    pub median_time_s: f64,
    pub percent: f64,
}

/// Per-tool medians normalized to percentages (percent-of-medians; the
/// normalization is stated explicitly in rendered reports).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownReport {
    pub tools: BTreeMap<String, ToolBreakdown>,
    pub total_percent: f64,
}

/// For each tool, take the median across runs of that run's summed tool
/// time, then normalize medians to percentages.
pub fn median_breakdown(runs: &[RunMetrics]) -> Result<BreakdownReport, MetricsError> {
    let first = runs.first().ok_or(MetricsError::EmptyRuns)?;
    let tools: Vec<&String> = first.tool_times.keys().collect();
    for run in &runs[1..] {
        if run.tool_times.keys().ne(tools.iter().copied()) {
            return Err(MetricsError::ToolSetMismatch { run_id: run.run_id.clone() });
        }
    }
    let medians: BTreeMap<String, f64> = tools
        .iter()
        .map(|tool| {
            let totals: Vec<f64> = runs.iter().map(|r| r.tool_total(tool)).collect();
            ((*tool).clone(), median(&totals))
        })
        .collect();
    let grand: f64 = medians.values().sum();
    if grand == 0.0 {
        return Err(MetricsError::AllZeroTimes);
    }
    let tools: BTreeMap<String, ToolBreakdown> = medians
        .into_iter()
        .map(|(tool, m)| (tool, ToolBreakdown { median_time_s: m, percent: 100.0 * m / grand }))
        .collect();
    let total_percent = tools.values().map(|t| t.percent).sum();
    Ok(BreakdownReport { tools, total_percent })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupRow {
    pub cores: u32,
    pub makespan_s: f64,
    pub speedup: f64,
    pub efficiency: f64,
}

/// Group runs by core count (median makespan per group), then compute
/// speedup and efficiency relative to the smallest core count.
pub fn speedup_table(runs: &[RunMetrics]) -> Result<Vec<SpeedupRow>, MetricsError> {
    if runs.is_empty() {
        return Err(MetricsError::EmptyRuns);
    }
    let mut groups: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for r in runs {
        groups.entry(r.core_count).or_default().push(r.run_makespan());
    }
    if groups.len() < 2 {
        return Err(MetricsError::SingleCoreGroup);
    }
    let makespans: BTreeMap<u32, f64> =
        groups.into_iter().map(|(cores, ms)| (cores, median(&ms))).collect();
    let (&ref_cores, &ref_makespan) = makespans.iter().next().expect("nonempty groups");
    Ok(makespans
        .iter()
        .map(|(&cores, &makespan_s)| {
            let speedup = ref_makespan / makespan_s;
            SpeedupRow {
                cores,
                makespan_s,
                speedup,
                efficiency: speedup * ref_cores as f64 / cores as f64,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(id: &str, cores: u32, tools: &[(&str, &[f64])]) -> RunMetrics {
        RunMetrics {
            run_id: id.to_string(),
            core_count: cores,
            tool_times: tools.iter().map(|(t, v)| (t.to_string(), v.to_vec())).collect(),
            stage_makespans: tools
                .iter()
                .map(|(t, v)| (t.to_string(), v.iter().cloned().fold(0.0, f64::max)))
                .collect(),
        }
    }

    #[test]
    fn median_definition() {
        assert_eq!(median(&[10.0, 12.0, 100.0]), 12.0);
        assert_eq!(median(&[1.0, 2.0, 3.0, 4.0]), 2.5);
        assert_eq!(median(&[7.0]), 7.0);
    }

    #[test]
    fn breakdown_takes_median_of_per_run_totals() {
        let runs = vec![
            run("r1", 4, &[("x", &[10.0]), ("y", &[5.0])]),
            run("r2", 4, &[("x", &[12.0]), ("y", &[5.0])]),
            run("r3", 4, &[("x", &[100.0]), ("y", &[5.0])]),
        ];
        let b = median_breakdown(&runs).unwrap();
        assert_eq!(b.tools["x"].median_time_s, 12.0);
        assert_eq!(b.tools["y"].median_time_s, 5.0);
        assert!((b.tools["x"].percent - 100.0 * 12.0 / 17.0).abs() < 1e-9);
        assert!((b.total_percent - 100.0).abs() < 0.01);
    }

    #[test]
    fn single_run_breakdown_uses_its_totals() {
        let runs = vec![run("r1", 4, &[("x", &[3.0, 1.0]), ("y", &[6.0])])];
        let b = median_breakdown(&runs).unwrap();
        assert_eq!(b.tools["x"].median_time_s, 4.0);
        assert!((b.tools["x"].percent - 40.0).abs() < 1e-9);
    }

    #[test]
    fn breakdown_invariant_under_run_permutation() {
        let mut runs = vec![
            run("r1", 4, &[("x", &[10.0]), ("y", &[1.0])]),
            run("r2", 4, &[("x", &[20.0]), ("y", &[2.0])]),
            run("r3", 4, &[("x", &[30.0]), ("y", &[3.0])]),
        ];
        let b1 = median_breakdown(&runs).unwrap();
        runs.reverse();
        let b2 = median_breakdown(&runs).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn tool_set_mismatch_rejected() {
        let runs = vec![run("r1", 4, &[("x", &[1.0])]), run("r2", 4, &[("y", &[1.0])])];
        assert!(matches!(median_breakdown(&runs), Err(MetricsError::ToolSetMismatch { .. })));
    }

    #[test]
    fn percentages_sum_to_100() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let tools: Vec<(String, Vec<f64>)> = (0..rng.gen_range(1..6))
                .map(|i| {
                    let times: Vec<f64> =
                        (0..rng.gen_range(1..5)).map(|_| rng.gen_range(0.1..100.0)).collect();
                    (format!("tool{i}"), times)
                })
                .collect();
            let runs: Vec<RunMetrics> = (0..3)
                .map(|r| {
                    run(
                        &format!("r{r}"),
                        8,
                        &tools
                            .iter()
                            .map(|(t, v)| (t.as_str(), v.as_slice()))
                            .collect::<Vec<_>>(),
                    )
                })
                .collect();
            let b = median_breakdown(&runs).unwrap();
            assert!((b.total_percent - 100.0).abs() < 0.01);
        }
    }

    #[test]
    fn speedup_ideal_scaling() {
        let runs = vec![
            run("a", 32, &[("sim", &[40.0])]),
            run("b", 64, &[("sim", &[20.0])]),
            run("c", 128, &[("sim", &[10.0])]),
        ];
        let rows = speedup_table(&runs).unwrap();
        assert_eq!(rows[0].speedup, 1.0);
        assert_eq!(rows[1].speedup, 2.0);
        assert_eq!(rows[2].speedup, 4.0);
        assert!(rows.iter().all(|r| (r.efficiency - 1.0).abs() < 1e-9));
    }

    #[test]
    fn speedup_flat_makespans() {
        let runs = vec![
            run("a", 32, &[("sim", &[100.0])]),
            run("b", 64, &[("sim", &[100.0])]),
            run("c", 128, &[("sim", &[100.0])]),
        ];
        let rows = speedup_table(&runs).unwrap();
        assert!(rows.iter().all(|r| r.speedup == 1.0));
        assert_eq!(rows[2].efficiency, 0.25);
    }

    #[test]
    fn single_group_rejected() {
        let runs = vec![run("a", 32, &[("sim", &[1.0])])];
        assert!(matches!(speedup_table(&runs), Err(MetricsError::SingleCoreGroup)));
    }
}
