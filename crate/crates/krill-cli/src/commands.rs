//! Subcommand wiring: flag parsing and file plumbing around the library.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use krill::annotation::{
    export_metarep_jsonl, export_tsv, merge_annotations, parse_evidence_table,
    parse_gene_predictions, AnnotationRecord, Evidence,
};
use krill::exec::{
    default_error_patterns, read_ledger, ExecError, ExecOptions, Executor, LocalBackend, RunResult,
};
use krill::metrics::{median_breakdown, speedup_table, RunMetrics};
use krill::pipeline::{parse_pipeline_spec, validate_spec, PipelineSpec, ScatterMode};
use krill::report::{
    straggler_nodes, write_breakdown_tsv, write_run_report, write_run_report_json, RunReport,
};
use krill::seq::{
    merge_parts, quality_filter, read_records, split_records, write_records, FilterParams,
    Partition, SeqFormat,
};
use krill::sim::{
    job_makespan, parse_cluster_config, parse_scenario, run_scenario, write_summary_tsv,
    write_trace_jsonl, SimBackend, SimClusterConfig, SimEvent, SimNode,
};
use krill::taxonomy::{
    build_taxonomy, classify_reads, hierarchy_counts, hierarchy_json, parse_hits_tsv,
    parse_taxonomy_tsv, write_assignments_tsv, write_hierarchy_text,
};

/// Scatter-gather pipeline runner with local and simulated batch backends.
#[derive(Parser)]
#[command(name = "krill", version, about)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a pipeline to completion (blocking).
    Run(RunArgs),
    /// Start a pipeline run in a detached background process.
    Submit(RunArgs),
    /// Report the state of a (possibly running) detached run.
    Status(StatusArgs),
    /// Block until a detached run finishes.
    Wait(WaitArgs),
    /// Run a cluster scenario in virtual time.
    Simulate(SimulateArgs),
    /// Classify reads from hit lists against a taxonomy tree.
    Classify(ClassifyArgs),
    /// Split a sequence file into count-balanced parts.
    Split(SplitArgs),
    /// Merge split parts back into one sequence file.
    Merge(MergeArgs),
    /// Drop low-quality, short, or N-rich records.
    Filter(FilterArgs),
    /// Merge gene predictions with per-tool evidence tables.
    Annotate(AnnotateArgs),
    /// Export merged annotation records (TSV or Metarep-style JSONL).
    Export(ExportArgs),
    /// Render breakdown/speedup/straggler reports from run metrics.
    Report(ReportArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Auto,
    Fasta,
    Fastq,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendArg {
    Local,
    Sim,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Pipeline definition (TOML).
    #[arg(long)]
    spec: PathBuf,
    /// Input dataset (FASTA/FASTQ).
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "auto")]
    format: FormatArg,
    #[arg(long, value_enum, default_value = "local")]
    backend: BackendArg,
    /// Core budget: scatter width for scatter stages.
    #[arg(long, default_value_t = 1)]
    cores: u32,
    /// Run directory (default: $KRILL_RUN_ROOT or the spec's workdir_root
    /// joined with the pipeline name).
    #[arg(long)]
    run_root: Option<PathBuf>,
    /// Local backend worker threads (default: enough for the widest stage).
    #[arg(long)]
    workers: Option<u32>,
    /// Simulated cluster definition for --backend sim (default: one node
    /// wide enough for the job).
    #[arg(long)]
    cluster: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    poll_ms: u64,
    #[arg(long, default_value_t = 600)]
    timeout_s: u64,
    /// Log patterns treated as fatal (default: ERROR, FATAL,
    /// "Segmentation fault"); repeatable.
    #[arg(long = "error-pattern")]
    error_patterns: Vec<String>,
}

#[derive(Args)]
struct StatusArgs {
    #[arg(long)]
    run_root: PathBuf,
}

#[derive(Args)]
struct WaitArgs {
    #[arg(long)]
    run_root: PathBuf,
    #[arg(long, default_value_t = 600)]
    timeout_s: u64,
    #[arg(long, default_value_t = 200)]
    poll_ms: u64,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario file: cluster plus job list (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory for trace.jsonl, summary.tsv, report.txt/json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClassifyArgs {
    /// Taxonomy TSV: child, parent (empty for root), name, rank.
    #[arg(long)]
    tree: PathBuf,
    /// Hits TSV: read_id, taxon_id (one row per hit).
    #[arg(long)]
    hits: PathBuf,
    /// Restrict classification to reads present in this file; reads
    /// without hits become UNCLASSIFIED rows.
    #[arg(long)]
    reads: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    min_hits: usize,
    /// Assignments TSV output.
    #[arg(long)]
    assignments: PathBuf,
    /// Indented per-node count tree (text).
    #[arg(long)]
    hierarchy_text: Option<PathBuf>,
    /// Nested per-node count document (JSON).
    #[arg(long)]
    hierarchy_json: Option<PathBuf>,
    /// Copy --reads through unchanged (canonical form); handy in scatter
    /// stages whose dataset continues downstream.
    #[arg(long, requires = "reads")]
    passthrough: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "auto")]
    format: FormatArg,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    parts: usize,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, value_enum, default_value = "auto")]
    format: FormatArg,
}

#[derive(Args)]
struct MergeArgs {
    /// Directory holding part_<k>.<ext> files from `split`.
    #[arg(long)]
    in_dir: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 0)]
    min_length: usize,
    #[arg(long, default_value_t = 0.0)]
    min_mean_quality: f64,
    #[arg(long, default_value_t = 1.0)]
    max_n_fraction: f64,
    /// Rejection counts per criterion (TSV).
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "auto")]
    format: FormatArg,
}

#[derive(Args)]
struct AnnotateArgs {
    /// Predictions TSV: gene_id, contig_id, start, end, strand.
    #[arg(long)]
    predictions: PathBuf,
    /// Evidence table as tool=path; repeatable.
    #[arg(long = "evidence")]
    evidence: Vec<String>,
    /// Keep only predictions whose contig appears in this dataset.
    #[arg(long)]
    contigs: Option<PathBuf>,
    /// Merged records output (JSON).
    #[arg(long)]
    records: PathBuf,
    /// Orphan evidence rows (TSV); always counted on stderr.
    #[arg(long)]
    orphans: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "auto")]
    format: FormatArg,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ExportFormat {
    Tsv,
    Metarep,
}

#[derive(Args)]
struct ExportArgs {
    /// Records JSON from `annotate`.
    #[arg(long)]
    records: PathBuf,
    #[arg(long, value_enum)]
    format: ExportFormat,
    #[arg(long)]
    out: PathBuf,
    /// Library id stamped on Metarep-style documents.
    #[arg(long, default_value = "library")]
    library: String,
}

#[derive(Args)]
struct ReportArgs {
    /// RunMetrics JSON files from pipeline runs; repeatable.
    #[arg(long = "metrics")]
    metrics: Vec<PathBuf>,
    /// Scenario + trace from `simulate` for job/straggler sections.
    #[arg(long, requires = "trace")]
    scenario: Option<PathBuf>,
    #[arg(long, requires = "scenario")]
    trace: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

pub fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Submit(args) => cmd_submit(args),
        Command::Status(args) => cmd_status(args),
        Command::Wait(args) => cmd_wait(args),
        Command::Simulate(args) => cmd_simulate(args).map(|_| ExitCode::SUCCESS),
        Command::Classify(args) => cmd_classify(args).map(|_| ExitCode::SUCCESS),
        Command::Split(args) => cmd_split(args).map(|_| ExitCode::SUCCESS),
        Command::Merge(args) => cmd_merge(args).map(|_| ExitCode::SUCCESS),
        Command::Filter(args) => cmd_filter(args).map(|_| ExitCode::SUCCESS),
        Command::Annotate(args) => cmd_annotate(args).map(|_| ExitCode::SUCCESS),
        Command::Export(args) => cmd_export(args).map(|_| ExitCode::SUCCESS),
        Command::Report(args) => cmd_report(args).map(|_| ExitCode::SUCCESS),
    }
}

fn detect_format(path: &Path, arg: FormatArg) -> Result<SeqFormat> {
    match arg {
        FormatArg::Fasta => Ok(SeqFormat::Fasta),
        FormatArg::Fastq => Ok(SeqFormat::Fastq),
        FormatArg::Auto => {
            if let Some(f) = SeqFormat::from_extension(path) {
                return Ok(f);
            }
            let mut byte = [0u8; 1];
            let n = File::open(path)
                .with_context(|| format!("cannot open {}", path.display()))?
                .read(&mut byte)?;
            match byte.first().filter(|_| n > 0) {
                Some(b'>') => Ok(SeqFormat::Fasta),
                Some(b'@') => Ok(SeqFormat::Fastq),
                _ => bail!("cannot detect sequence format of {}; pass --format", path.display()),
            }
        }
    }
}

fn read_dataset(path: &Path, arg: FormatArg) -> Result<(Vec<krill::seq::SequenceRecord>, SeqFormat)> {
    let format = detect_format(path, arg)?;
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let records = read_records(BufReader::new(file), format)
        .with_context(|| format!("parsing {}", path.display()))?;
    Ok((records, format))
}

fn create_out(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("cannot create {}", parent.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
    ))
}

fn load_spec(path: &Path) -> Result<PipelineSpec> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let spec = parse_pipeline_spec(&text)?;
    let violations = validate_spec(&spec);
    if !violations.is_empty() {
        let msgs: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        bail!("invalid pipeline spec:\n  {}", msgs.join("\n  "));
    }
    Ok(spec)
}

fn resolve_run_root(args: &RunArgs, spec: &PipelineSpec) -> PathBuf {
    if let Some(root) = &args.run_root {
        return root.clone();
    }
    if let Ok(root) = std::env::var("KRILL_RUN_ROOT") {
        return PathBuf::from(root).join(&spec.name);
    }
    spec.workdir_root.join(&spec.name)
}

/// Widest core request any single stage will make.
fn max_stage_cores(spec: &PipelineSpec, budget: u32) -> u32 {
    spec.stages
        .iter()
        .map(|s| match s.mode {
            ScatterMode::Scatter => budget,
            ScatterMode::Single => s.cores,
        })
        .max()
        .unwrap_or(budget)
        .max(1)
}

fn exec_options(args: &RunArgs) -> Result<ExecOptions> {
    let error_patterns = if args.error_patterns.is_empty() {
        default_error_patterns()
    } else {
        args.error_patterns
            .iter()
            .map(|p| regex::Regex::new(p).map_err(|e| anyhow!("bad --error-pattern {p:?}: {e}")))
            .collect::<Result<_>>()?
    };
    Ok(ExecOptions {
        poll_interval: Duration::from_millis(args.poll_ms),
        timeout: Duration::from_secs(args.timeout_s),
        error_patterns,
        ..ExecOptions::default()
    })
}

fn write_run_artifacts(
    run_root: &Path,
    metrics: &RunMetrics,
    status: &str,
    detail: Option<String>,
) -> Result<()> {
    let mut out = create_out(&run_root.join("metrics.json"))?;
    serde_json::to_writer_pretty(&mut out, metrics)?;
    writeln!(out)?;
    let mut res = create_out(&run_root.join("result.json"))?;
    serde_json::to_writer_pretty(
        &mut res,
        &serde_json::json!({ "status": status, "detail": detail }),
    )?;
    writeln!(res)?;
    Ok(())
}

fn summarize(result: &RunResult) {
    for stage in &result.stages {
        println!(
            "stage {}: {} task(s), makespan {:.3} s",
            stage.stage_id,
            stage.reports.len(),
            stage.makespan_s
        );
    }
}

fn run_with_backend(
    args: &RunArgs,
    spec: &PipelineSpec,
    dataset: Vec<krill::seq::SequenceRecord>,
    run_root: &Path,
) -> Result<std::result::Result<RunResult, ExecError>> {
    let opts = exec_options(args)?;
    let ledger = run_root.join("events.jsonl");
    match args.backend {
        BackendArg::Local => {
            let workers = args.workers.unwrap_or_else(|| max_stage_cores(spec, args.cores));
            let backend = LocalBackend::new(workers);
            let mut ex = Executor::new(backend).with_options(opts).with_ledger(&ledger)?;
            Ok(ex.run_pipeline(spec, dataset, args.cores, run_root))
        }
        BackendArg::Sim => {
            let config = match &args.cluster {
                Some(path) => {
                    let text = std::fs::read_to_string(path)
                        .with_context(|| format!("cannot read {}", path.display()))?;
                    parse_cluster_config(&text)?
                }
                None => SimClusterConfig {
                    nodes: vec![SimNode {
                        node_id: "node0".to_string(),
                        cores: max_stage_cores(spec, args.cores),
                        slowdown: 1.0,
                    }],
                    seed: 0,
                    service_time_jitter: 0.0,
                },
            };
            let backend = SimBackend::from_config(config)?;
            let mut ex = Executor::new(backend).with_options(opts).with_ledger(&ledger)?;
            let outcome = ex.run_pipeline(spec, dataset, args.cores, run_root);
            // keep the virtual-time trace next to the metrics
            let mut out = create_out(&run_root.join("trace.jsonl"))?;
            write_trace_jsonl(ex.backend().cluster().trace(), &mut out)?;
            Ok(outcome)
        }
    }
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let spec = load_spec(&args.spec)?;
    let run_root = resolve_run_root(&args, &spec);
    std::fs::create_dir_all(&run_root)
        .with_context(|| format!("cannot create run root {}", run_root.display()))?;
    let (dataset, _) = read_dataset(&args.input, args.format)?;

    match run_with_backend(&args, &spec, dataset, &run_root)? {
        Ok(result) => {
            summarize(&result);
            write_run_artifacts(&run_root, &result.metrics, "succeeded", None)?;
            println!("run succeeded: {}", run_root.display());
            Ok(ExitCode::SUCCESS)
        }
        Err(ExecError::StageFailed { stage_id, failures, completed }) => {
            summarize(&completed);
            let detail: Vec<String> =
                failures.iter().map(|(id, r)| format!("{id}: {r}")).collect();
            write_run_artifacts(
                &run_root,
                &completed.metrics,
                "failed",
                Some(format!("stage {stage_id}: {}", detail.join("; "))),
            )?;
            eprintln!("stage {stage_id} failed:");
            for d in &detail {
                eprintln!("  {d}");
            }
            eprintln!("failed task workdirs retained under {}", run_root.display());
            Ok(ExitCode::from(1))
        }
        Err(other) => Err(other.into()),
    }
}

fn cmd_submit(args: RunArgs) -> Result<ExitCode> {
    let spec = load_spec(&args.spec)?;
    let run_root = resolve_run_root(&args, &spec);
    std::fs::create_dir_all(&run_root)?;
    let exe = std::env::current_exe().context("cannot locate own executable")?;
    let log = File::create(run_root.join("run.log"))?;
    let mut cmd = std::process::Command::new(exe);
    cmd.arg("run")
        .arg("--spec")
        .arg(&args.spec)
        .arg("--input")
        .arg(&args.input)
        .arg("--cores")
        .arg(args.cores.to_string())
        .arg("--run-root")
        .arg(&run_root)
        .arg("--backend")
        .arg(match args.backend {
            BackendArg::Local => "local",
            BackendArg::Sim => "sim",
        })
        .arg("--poll-ms")
        .arg(args.poll_ms.to_string())
        .arg("--timeout-s")
        .arg(args.timeout_s.to_string())
        .stdin(std::process::Stdio::null())
        .stdout(std::process::Stdio::from(log.try_clone()?))
        .stderr(std::process::Stdio::from(log));
    if let Some(w) = args.workers {
        cmd.arg("--workers").arg(w.to_string());
    }
    if let Some(c) = &args.cluster {
        cmd.arg("--cluster").arg(c);
    }
    for p in &args.error_patterns {
        cmd.arg("--error-pattern").arg(p);
    }
    let child = cmd.spawn().context("cannot spawn detached run")?;
    let mut out = create_out(&run_root.join("submit.json"))?;
    serde_json::to_writer_pretty(&mut out, &serde_json::json!({ "pid": child.id() }))?;
    writeln!(out)?;
    println!("submitted: {}", run_root.display());
    Ok(ExitCode::SUCCESS)
}

fn read_result(run_root: &Path) -> Option<serde_json::Value> {
    let text = std::fs::read_to_string(run_root.join("result.json")).ok()?;
    serde_json::from_str(&text).ok()
}

fn cmd_status(args: StatusArgs) -> Result<ExitCode> {
    if let Some(result) = read_result(&args.run_root) {
        let status = result["status"].as_str().unwrap_or("unknown");
        println!("run {}: {status}", args.run_root.display());
        if let Some(detail) = result["detail"].as_str() {
            println!("  {detail}");
        }
        return Ok(if status == "succeeded" { ExitCode::SUCCESS } else { ExitCode::from(1) });
    }
    let ledger = args.run_root.join("events.jsonl");
    if !ledger.exists() {
        bail!("no run found under {}", args.run_root.display());
    }
    let events = read_ledger(&ledger)?;
    let mut latest: std::collections::BTreeMap<String, String> = Default::default();
    for e in events {
        latest.insert(e.task_id, e.new_state);
    }
    println!("run {}: in progress", args.run_root.display());
    for (task, state) in latest {
        println!("  {task}\t{state}");
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_wait(args: WaitArgs) -> Result<ExitCode> {
    let deadline = std::time::Instant::now() + Duration::from_secs(args.timeout_s);
    loop {
        if let Some(result) = read_result(&args.run_root) {
            let status = result["status"].as_str().unwrap_or("unknown");
            println!("run {}: {status}", args.run_root.display());
            return Ok(if status == "succeeded" { ExitCode::SUCCESS } else { ExitCode::from(1) });
        }
        if std::time::Instant::now() >= deadline {
            eprintln!("timed out waiting for {}", args.run_root.display());
            return Ok(ExitCode::from(1));
        }
        std::thread::sleep(Duration::from_millis(args.poll_ms));
    }
}

fn sim_metrics_per_job(
    scenario: &krill::sim::Scenario,
    trace: &[SimEvent],
) -> Result<Vec<RunMetrics>> {
    scenario
        .jobs
        .iter()
        .map(|sj| {
            let m = job_makespan(trace, &sj.job.job_id)?;
            Ok(RunMetrics {
                run_id: sj.job.job_id.clone(),
                core_count: sj.job.requested_cores,
                tool_times: [("sim".to_string(), sj.job.task_times.clone())].into_iter().collect(),
                stage_makespans: [("sim".to_string(), m.exec_s)].into_iter().collect(),
            })
        })
        .collect()
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.scenario)
        .with_context(|| format!("cannot read {}", args.scenario.display()))?;
    let scenario = parse_scenario(&text)?;
    std::fs::create_dir_all(&args.out)?;
    let run = run_scenario(&scenario)?;

    let mut trace_out = create_out(&args.out.join("trace.jsonl"))?;
    write_trace_jsonl(&run.trace, &mut trace_out)?;
    let mut summary_out = create_out(&args.out.join("summary.tsv"))?;
    write_summary_tsv(&run.summaries, &mut summary_out)?;

    let per_job = sim_metrics_per_job(&scenario, &run.trace)?;
    let speedups = speedup_table(&per_job).ok();
    let report = RunReport {
        runs: None,
        breakdown: None,
        speedups,
        stragglers: straggler_nodes(&scenario.cluster, &run.trace),
        jobs: Some(run.summaries.clone()),
    };
    let mut txt = create_out(&args.out.join("report.txt"))?;
    write_run_report(&report, &mut txt)?;
    let mut json = create_out(&args.out.join("report.json"))?;
    write_run_report_json(&report, &mut json)?;
    println!("simulated {} job(s); outputs in {}", run.summaries.len(), args.out.display());
    Ok(())
}

fn cmd_classify(args: ClassifyArgs) -> Result<()> {
    let tree_file = File::open(&args.tree)
        .with_context(|| format!("cannot open {}", args.tree.display()))?;
    let edges = parse_taxonomy_tsv(BufReader::new(tree_file))?;
    let tree = build_taxonomy(&edges)?;
    let hits_file = File::open(&args.hits)
        .with_context(|| format!("cannot open {}", args.hits.display()))?;
    let mut hits = parse_hits_tsv(BufReader::new(hits_file))?;

    if let Some(reads_path) = &args.reads {
        let (records, format) = read_dataset(reads_path, args.format)?;
        let ids: BTreeSet<&str> = records.iter().map(|r| r.id.as_str()).collect();
        hits.retain(|read_id, _| ids.contains(read_id.as_str()));
        for id in &ids {
            hits.entry(id.to_string()).or_default();
        }
        if let Some(pass) = &args.passthrough {
            let mut out = create_out(pass)?;
            write_records(&records, format, &mut out)?;
        }
    }

    let assignments = classify_reads(&hits, &tree, args.min_hits)?;
    let mut out = create_out(&args.assignments)?;
    write_assignments_tsv(&assignments, &mut out)?;

    if args.hierarchy_text.is_some() || args.hierarchy_json.is_some() {
        let counts = hierarchy_counts(&assignments, &tree)?;
        if let Some(path) = &args.hierarchy_text {
            let mut out = create_out(path)?;
            write_hierarchy_text(&tree, &counts, &mut out)?;
        }
        if let Some(path) = &args.hierarchy_json {
            let mut out = create_out(path)?;
            serde_json::to_writer_pretty(&mut out, &hierarchy_json(&tree, &counts))?;
            writeln!(out)?;
        }
    }
    Ok(())
}

fn cmd_split(args: SplitArgs) -> Result<()> {
    let (records, format) = read_dataset(&args.input, args.format)?;
    let parts = split_records(records, args.parts)?;
    std::fs::create_dir_all(&args.out_dir)?;
    for part in &parts {
        let path = args.out_dir.join(format!("part_{:04}.{}", part.index, format.extension()));
        let mut out = create_out(&path)?;
        write_records(&part.records, format, &mut out)?;
    }
    println!("wrote {} part(s) to {}", parts.len(), args.out_dir.display());
    Ok(())
}

fn cmd_merge(args: MergeArgs) -> Result<()> {
    let mut entries: Vec<(usize, PathBuf, SeqFormat)> = Vec::new();
    for entry in std::fs::read_dir(&args.in_dir)
        .with_context(|| format!("cannot read {}", args.in_dir.display()))?
    {
        let path = entry?.path();
        let name = match path.file_stem().and_then(|s| s.to_str()) {
            Some(s) => s,
            None => continue,
        };
        let Some(index_str) = name.strip_prefix("part_") else { continue };
        let Ok(index) = index_str.parse::<usize>() else { continue };
        let Some(format) = SeqFormat::from_extension(&path) else { continue };
        entries.push((index, path, format));
    }
    if entries.is_empty() {
        bail!("no part_<k> sequence files in {}", args.in_dir.display());
    }
    entries.sort_by(|a, b| (a.0, &a.1).cmp(&(b.0, &b.1)));
    let n_parts = entries.len();
    let mut parts = Vec::with_capacity(n_parts);
    for (index, path, format) in entries {
        let file = File::open(&path)?;
        let records = read_records(BufReader::new(file), format)
            .with_context(|| format!("parsing {}", path.display()))?;
        parts.push(Partition { index, n_parts, records });
    }
    let merged = merge_parts(parts)?;
    let format = SeqFormat::from_extension(&args.output).unwrap_or_else(|| {
        if merged.iter().all(|r| r.quality.is_some()) {
            SeqFormat::Fastq
        } else {
            SeqFormat::Fasta
        }
    });
    let mut out = create_out(&args.output)?;
    write_records(&merged, format, &mut out)?;
    println!("merged {} record(s) into {}", merged.len(), args.output.display());
    Ok(())
}

fn cmd_filter(args: FilterArgs) -> Result<()> {
    let params = FilterParams {
        min_length: args.min_length,
        min_mean_quality: args.min_mean_quality,
        max_n_fraction: args.max_n_fraction,
    };
    params.validate()?;
    let (records, format) = read_dataset(&args.input, args.format)?;
    let (kept, report) = quality_filter(records, &params);
    let mut out = create_out(&args.output)?;
    write_records(&kept, format, &mut out)?;
    if let Some(path) = &args.report {
        let mut rep = create_out(path)?;
        rep.write_all(report.to_tsv().as_bytes())?;
    }
    eprintln!(
        "kept {} of {} record(s) ({} length, {} N-fraction, {} quality rejections)",
        report.kept,
        report.total(),
        report.rejected_length,
        report.rejected_n_fraction,
        report.rejected_quality
    );
    Ok(())
}

fn cmd_annotate(args: AnnotateArgs) -> Result<()> {
    let pred_file = File::open(&args.predictions)
        .with_context(|| format!("cannot open {}", args.predictions.display()))?;
    let mut predictions = parse_gene_predictions(BufReader::new(pred_file))?;

    if let Some(contigs) = &args.contigs {
        let (records, _) = read_dataset(contigs, args.format)?;
        let ids: BTreeSet<&str> = records.iter().map(|r| r.id.as_str()).collect();
        predictions.retain(|p| ids.contains(p.contig_id.as_str()));
    }

    let mut evidence_sets: Vec<Vec<Evidence>> = Vec::new();
    for spec in &args.evidence {
        let (tool, path) = spec
            .split_once('=')
            .ok_or_else(|| anyhow!("--evidence takes tool=path, got {spec:?}"))?;
        let file =
            File::open(path).with_context(|| format!("cannot open evidence file {path}"))?;
        evidence_sets.push(parse_evidence_table(BufReader::new(file), tool)?);
    }

    let outcome = merge_annotations(predictions, evidence_sets)?;
    if !outcome.orphans.is_empty() {
        eprintln!("{} orphan evidence row(s) reference unknown genes", outcome.orphans.len());
        if let Some(path) = &args.orphans {
            let mut out = create_out(path)?;
            writeln!(out, "#gene_id\ttool\tsubject_id\tscore\tevalue\tdescription")?;
            for o in &outcome.orphans {
                writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}\t{}",
                    o.gene_id,
                    o.tool,
                    o.subject_id,
                    krill::fmt_f64(o.score),
                    krill::fmt_f64(o.evalue),
                    o.description
                )?;
            }
        }
    }
    let mut out = create_out(&args.records)?;
    serde_json::to_writer(&mut out, &outcome.records)?;
    writeln!(out)?;
    eprintln!("merged {} record(s)", outcome.records.len());
    Ok(())
}

fn cmd_export(args: ExportArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.records)
        .with_context(|| format!("cannot read {}", args.records.display()))?;
    let records: Vec<AnnotationRecord> =
        serde_json::from_str(&text).context("records file is not annotate output")?;
    let mut out = create_out(&args.out)?;
    match args.format {
        ExportFormat::Tsv => export_tsv(&records, &mut out)?,
        ExportFormat::Metarep => export_metarep_jsonl(&records, &args.library, &mut out)?,
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let mut runs: Vec<RunMetrics> = Vec::new();
    for path in &args.metrics {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        runs.push(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?);
    }

    let mut report = RunReport::default();
    if !runs.is_empty() {
        report.breakdown = Some(median_breakdown(&runs)?);
        report.speedups = speedup_table(&runs).ok();
        report.runs = Some(runs);
    }

    if let (Some(scenario_path), Some(trace_path)) = (&args.scenario, &args.trace) {
        let scenario = parse_scenario(&std::fs::read_to_string(scenario_path)?)?;
        let trace: Vec<SimEvent> = std::fs::read_to_string(trace_path)?
            .lines()
            .filter(|l| !l.is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()
            .context("parsing trace")?;
        report.stragglers = straggler_nodes(&scenario.cluster, &trace);
        let per_job = sim_metrics_per_job(&scenario, &trace)?;
        if report.speedups.is_none() {
            report.speedups = speedup_table(&per_job).ok();
        }
        let summaries = scenario
            .jobs
            .iter()
            .map(|sj| {
                let m = job_makespan(&trace, &sj.job.job_id)?;
                Ok(krill::sim::JobSummary {
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
                })
            })
            .collect::<Result<Vec<_>>>()?;
        report.jobs = Some(summaries);
    }

    if report.is_empty() {
        bail!("nothing to report: pass --metrics and/or --scenario/--trace");
    }
    std::fs::create_dir_all(&args.out)?;
    let mut txt = create_out(&args.out.join("report.txt"))?;
    write_run_report(&report, &mut txt)?;
    let mut json = create_out(&args.out.join("report.json"))?;
    write_run_report_json(&report, &mut json)?;
    if let Some(b) = &report.breakdown {
        let mut tsv = create_out(&args.out.join("breakdown.tsv"))?;
        write_breakdown_tsv(b, &mut tsv)?;
    }
    println!("report written to {}", args.out.display());
    Ok(())
}
