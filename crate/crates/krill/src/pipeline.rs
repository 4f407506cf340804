//! Declarative pipeline definitions: a TOML document describing an ordered
//! chain of stages, each with a shell command template and scatter mode.
//!
//! ```toml
//! name = "demo"
//! workdir_root = "runs"
//!
//! [[stage]]
//! id = "filter"
//! mode = "scatter"                 # or "single"
//! command = "mytool --in {input} --out {output} --part {part}"
//! outputs = ["kept_{part}.fastq"]  # relative to the task workdir
//! logs = "*.log"                   # optional, default "*.log"
//! cores = 1                        # optional, default 1
//! base_time_s = 1.0                # optional, default 1.0 (simulator only)
//! input = "initial"                # optional: "initial" or an earlier stage id
//! ```
//!
//! Placeholders `{input}`, `{output}`, `{part}`, `{workdir}` are expanded at
//! planning time; `{{`/`}}` escape literal braces. Scatter stages must name
//! `{part}` in both command and outputs; unknown `{lower_snake}` tokens are
//! validation errors. A stage's input defaults to the previous stage's
//! gathered output (the initial dataset for the first stage).

use std::collections::HashSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("config serialize error: {0}")]
    Serialize(String),
}

/// Scatter mode of a stage: one task over the whole dataset, or one task
/// per partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScatterMode {
    Single,
    Scatter,
}

/// Where a stage reads its dataset from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StageInput {
    /// Previous stage's output; the initial dataset for the first stage.
    Default,
    /// The raw input dataset.
    Initial,
    /// A named earlier stage's gathered output.
    Stage(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageSpec {
    pub id: String,
    pub mode: ScatterMode,
    pub command: String,
    /// Output path templates relative to the task workdir; the first one is
    /// the stage's primary (dataset) output.
    pub outputs: Vec<String>,
    /// Glob over the task workdir selecting log files to scan.
    pub logs: String,
    /// Requested cores: the task width for single-mode stages. Scatter
    /// stages allocate one core per part from the run-level budget.
    pub cores: u32,
    /// Per-task base service time estimate, used only by the simulator
    /// backend.
    pub base_time_s: f64,
    pub input: StageInput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSpec {
    pub name: String,
    pub workdir_root: PathBuf,
    pub stages: Vec<StageSpec>,
}

/// One broken invariant, tied to the stage it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub stage: Option<String>,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.stage {
            Some(s) => write!(f, "stage {s:?}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPipeline {
    name: String,
    #[serde(default = "default_workdir_root")]
    workdir_root: String,
    #[serde(rename = "stage", default)]
    stages: Vec<RawStage>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStage {
    id: String,
    mode: ScatterMode,
    command: String,
    outputs: Vec<String>,
    #[serde(default = "default_log_glob")]
    logs: String,
    #[serde(default = "default_cores")]
    cores: u32,
    #[serde(default = "default_base_time")]
    base_time_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    input: Option<String>,
}

fn default_workdir_root() -> String {
    "runs".to_string()
}

fn default_log_glob() -> String {
    "*.log".to_string()
}

fn default_cores() -> u32 {
    1
}

fn default_base_time() -> f64 {
    1.0
}

/// Parse a pipeline document. Defaults are resolved here; placeholders are
/// preserved unexpanded. Syntax errors report their position.
pub fn parse_pipeline_spec(text: &str) -> Result<PipelineSpec, ConfigError> {
    let raw: RawPipeline = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    Ok(PipelineSpec {
        name: raw.name,
        workdir_root: PathBuf::from(raw.workdir_root),
        stages: raw
            .stages
            .into_iter()
            .map(|s| StageSpec {
                id: s.id,
                mode: s.mode,
                command: s.command,
                outputs: s.outputs,
                logs: s.logs,
                cores: s.cores,
                base_time_s: s.base_time_s,
                input: match s.input.as_deref() {
                    None => StageInput::Default,
                    Some("initial") => StageInput::Initial,
                    Some(other) => StageInput::Stage(other.to_string()),
                },
            })
            .collect(),
    })
}

/// Canonical TOML rendering; `parse ∘ serialize` is the identity on parsed
/// specs.
pub fn serialize_pipeline_spec(spec: &PipelineSpec) -> Result<String, ConfigError> {
    let raw = RawPipeline {
        name: spec.name.clone(),
        workdir_root: spec.workdir_root.to_string_lossy().into_owned(),
        stages: spec
            .stages
            .iter()
            .map(|s| RawStage {
                id: s.id.clone(),
                mode: s.mode,
                command: s.command.clone(),
                outputs: s.outputs.clone(),
                logs: s.logs.clone(),
                cores: s.cores,
                base_time_s: s.base_time_s,
                input: match &s.input {
                    StageInput::Default => None,
                    StageInput::Initial => Some("initial".to_string()),
                    StageInput::Stage(id) => Some(id.clone()),
                },
            })
            .collect(),
    };
    toml::to_string(&raw).map_err(|e| ConfigError::Serialize(e.to_string()))
}

pub const PLACEHOLDERS: &[&str] = &["input", "output", "part", "workdir"];

/// Brace tokens of the form `{lower_snake}` in a template, honoring `{{`
/// escapes. Anything else between braces (spaces, `$`, digits first) is
/// treated as literal shell text.
pub fn placeholder_tokens(template: &str) -> Vec<&str> {
    let mut tokens = Vec::new();
    let bytes = template.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            if i + 1 < bytes.len() && bytes[i + 1] == b'{' {
                i += 2;
                continue;
            }
            if let Some(end) = template[i + 1..].find(['{', '}']) {
                if bytes[i + 1 + end] == b'}' {
                    let token = &template[i + 1..i + 1 + end];
                    if !token.is_empty()
                        && token.bytes().all(|b| b.is_ascii_lowercase() || b == b'_')
                    {
                        tokens.push(token);
                    }
                    i += end + 2;
                    continue;
                }
            }
        }
        i += 1;
    }
    tokens
}

/// Check every typed invariant. Pure: no filesystem access. An empty list
/// means the spec is valid.
pub fn validate_spec(spec: &PipelineSpec) -> Vec<Violation> {
    let mut violations = Vec::new();
    let mut push = |stage: Option<&str>, message: String| {
        violations.push(Violation { stage: stage.map(|s| s.to_string()), message });
    };

    if spec.name.is_empty() {
        push(None, "pipeline name must not be empty".to_string());
    }
    if spec.stages.is_empty() {
        push(None, "pipeline must declare at least one stage".to_string());
    }

    let mut seen = HashSet::new();
    for stage in &spec.stages {
        if !seen.insert(stage.id.as_str()) {
            push(Some(&stage.id), format!("duplicate stage id {:?}", stage.id));
        }
    }

    let mut earlier: HashSet<&str> = HashSet::new();
    for stage in &spec.stages {
        let id = stage.id.as_str();
        if id.is_empty() || !id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-') {
            push(Some(id), format!("stage id {id:?} must match [A-Za-z0-9_-]+"));
        }
        if stage.cores < 1 {
            push(Some(id), "cores must be >= 1".to_string());
        }
        if !(stage.base_time_s > 0.0) {
            push(Some(id), format!("base_time_s must be > 0, got {}", stage.base_time_s));
        }
        if stage.outputs.is_empty() {
            push(Some(id), "at least one output must be declared".to_string());
        }
        if stage.command.trim().is_empty() {
            push(Some(id), "command must not be empty".to_string());
        }

        let cmd_tokens = placeholder_tokens(&stage.command);
        for t in &cmd_tokens {
            if !PLACEHOLDERS.contains(t) {
                push(Some(id), format!("unknown placeholder {{{t}}} in command"));
            }
        }
        let mut out_tokens: Vec<&str> = Vec::new();
        for o in &stage.outputs {
            out_tokens.extend(placeholder_tokens(o));
        }
        for t in &out_tokens {
            if *t != "part" {
                push(Some(id), format!("unknown placeholder {{{t}}} in outputs (only {{part}} is allowed)"));
            }
        }
        for t in placeholder_tokens(&stage.logs) {
            if t != "part" {
                push(Some(id), format!("unknown placeholder {{{t}}} in logs (only {{part}} is allowed)"));
            }
        }

        match stage.mode {
            ScatterMode::Scatter => {
                if !cmd_tokens.contains(&"part") {
                    push(Some(id), "scatter stage must name {part} in its command".to_string());
                }
                if !stage.outputs.iter().all(|o| placeholder_tokens(o).contains(&"part")) {
                    push(Some(id), "scatter stage must name {part} in every output".to_string());
                }
            }
            ScatterMode::Single => {
                if cmd_tokens.contains(&"part") || out_tokens.contains(&"part") {
                    push(Some(id), "single-mode stage must not use {part}".to_string());
                }
            }
        }

        if let StageInput::Stage(source) = &stage.input {
            if !earlier.contains(source.as_str()) {
                push(
                    Some(id),
                    format!("input {source:?} does not name an earlier stage (inputs must reference earlier stages or the initial dataset)"),
                );
            }
        }
        earlier.insert(id);
    }
    violations
}

#[cfg(test)]
mod tests {
    use super::*;

    const THREE_STAGE: &str = r#"
name = "demo"
workdir_root = "runs"

[[stage]]
id = "filter"
mode = "scatter"
command = "tool-a --in {input} --out {output} --part {part}"
outputs = ["kept_{part}.fastq"]

[[stage]]
id = "classify"
mode = "scatter"
command = "tool-b {input} {output} {part}"
outputs = ["pass_{part}.fastq", "assign_{part}.tsv"]
cores = 2
base_time_s = 4.5

[[stage]]
id = "annotate"
mode = "single"
command = "tool-c {input} {output} {workdir}"
outputs = ["annotations.tsv"]
"#;

    #[test]
    fn minimal_single_stage_doc() {
        let text = "name = \"p\"\n[[stage]]\nid = \"s\"\nmode = \"single\"\ncommand = \"cp {input} {output}\"\noutputs = [\"o.fasta\"]\n";
        let spec = parse_pipeline_spec(text).unwrap();
        assert_eq!(spec.stages.len(), 1);
        assert_eq!(spec.stages[0].mode, ScatterMode::Single);
        assert_eq!(spec.stages[0].cores, 1);
        assert_eq!(spec.stages[0].base_time_s, 1.0);
        assert_eq!(spec.stages[0].logs, "*.log");
        assert!(validate_spec(&spec).is_empty());
    }

    #[test]
    fn three_stage_order_preserved() {
        let spec = parse_pipeline_spec(THREE_STAGE).unwrap();
        let ids: Vec<&str> = spec.stages.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["filter", "classify", "annotate"]);
        assert!(validate_spec(&spec).is_empty());
    }

    #[test]
    fn syntax_error_reports_position() {
        let err = parse_pipeline_spec("name = \"p\"\n[[stage]\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "no position in: {msg}");
    }

    #[test]
    fn unknown_field_rejected() {
        let text = "name = \"p\"\nbogus = 1\n";
        assert!(parse_pipeline_spec(text).is_err());
    }

    #[test]
    fn missing_required_field_rejected() {
        let text = "name = \"p\"\n[[stage]]\nid = \"s\"\nmode = \"single\"\noutputs = [\"o\"]\n";
        assert!(parse_pipeline_spec(text).is_err());
    }

    #[test]
    fn scatter_without_part_is_a_violation() {
        let text = "name = \"p\"\n[[stage]]\nid = \"s\"\nmode = \"scatter\"\ncommand = \"cp {input} {output}\"\noutputs = [\"o_{part}.fasta\"]\n";
        let spec = parse_pipeline_spec(text).unwrap();
        let v = validate_spec(&spec);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].stage.as_deref(), Some("s"));
        assert!(v[0].message.contains("{part}"));
    }

    #[test]
    fn duplicate_stage_id_named_in_violation() {
        let mut spec = parse_pipeline_spec(THREE_STAGE).unwrap();
        spec.stages[1].id = "filter".to_string();
        spec.stages[1].input = StageInput::Default;
        let v = validate_spec(&spec);
        assert!(v.iter().any(|v| v.message.contains("duplicate") && v.stage.as_deref() == Some("filter")));
    }

    #[test]
    fn forward_input_reference_is_a_violation() {
        let mut spec = parse_pipeline_spec(THREE_STAGE).unwrap();
        spec.stages[0].input = StageInput::Stage("annotate".to_string());
        let v = validate_spec(&spec);
        assert_eq!(v.len(), 1);
        assert!(v[0].message.contains("earlier"));
    }

    #[test]
    fn unknown_placeholder_is_a_violation() {
        let mut spec = parse_pipeline_spec(THREE_STAGE).unwrap();
        spec.stages[0].command = "tool --in {inptu} --part {part}".to_string();
        let v = validate_spec(&spec);
        assert!(v.iter().any(|v| v.message.contains("{inptu}")));
    }

    #[test]
    fn awk_style_braces_are_not_placeholders() {
        assert_eq!(placeholder_tokens("awk '{print $1}' {input}"), vec!["input"]);
        assert_eq!(placeholder_tokens("echo {{literal}} {part}"), vec!["part"]);
        assert_eq!(placeholder_tokens("x {part_two}"), vec!["part_two"]);
    }

    #[test]
    fn every_violation_is_independently_triggerable() {
        let good = parse_pipeline_spec(THREE_STAGE).unwrap();
        assert!(validate_spec(&good).is_empty());
        // one-field mutations, each producing at least one violation
        let mutations: Vec<Box<dyn Fn(&mut PipelineSpec)>> = vec![
            Box::new(|s| s.stages[0].cores = 0),
            Box::new(|s| s.stages[0].base_time_s = 0.0),
            Box::new(|s| s.stages[0].outputs.clear()),
            Box::new(|s| s.stages[0].command = String::new()),
            Box::new(|s| s.stages[2].command = "tool-c {input} {output} {part}".to_string()),
            Box::new(|s| s.stages[0].id = "bad id".to_string()),
            Box::new(|s| s.stages.clear()),
        ];
        for (i, m) in mutations.iter().enumerate() {
            let mut spec = good.clone();
            m(&mut spec);
            assert!(!validate_spec(&spec).is_empty(), "mutation {i} not caught");
        }
    }

    #[test]
    fn parse_serialize_parse_is_a_fixpoint() {
        let s1 = parse_pipeline_spec(THREE_STAGE).unwrap();
        let t1 = serialize_pipeline_spec(&s1).unwrap();
        let s2 = parse_pipeline_spec(&t1).unwrap();
        assert_eq!(s1, s2);
        let t2 = serialize_pipeline_spec(&s2).unwrap();
        assert_eq!(t1, t2);
    }
}
