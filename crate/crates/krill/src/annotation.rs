//! Gene predictions and per-tool evidence tables, merged into annotation
//! records and exported as TSV or Metarep-style JSONL.
//!
//! Input formats (tab-delimited, LF, UTF-8, `#`-prefixed header lines):
//!
//! - predictions: `gene_id  contig_id  start  end  strand`
//! - evidence:    `gene_id  subject_id  score  evalue  description`
//!
//! The Metarep-style JSONL field set (`id`, `library`, `common_name`,
//! `hit_ids`, `evalues`, `tools`) is this crate's own definition of a
//! Metarep-like import document, not an upstream schema.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::fmt_f64;

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("line {line}: malformed row: {msg}")]
    MalformedRow { line: u64, msg: String },
    #[error("line {line}: duplicate gene id {id:?}")]
    DuplicateGene { line: u64, id: String },
    #[error("duplicate gene id {0:?} across merged prediction sets")]
    DuplicateGeneAcrossParts(String),
    #[error("line {line}: negative e-value {value}")]
    NegativeEvalue { line: u64, value: f64 },
    #[error("gene {id:?}: end {end} < start {start}")]
    EndBeforeStart { id: String, start: u64, end: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strand {
    #[serde(rename = "+")]
    Forward,
    #[serde(rename = "-")]
    Reverse,
}

impl Strand {
    pub fn symbol(&self) -> char {
        match self {
            Strand::Forward => '+',
            Strand::Reverse => '-',
        }
    }
}

/// A predicted gene on a contig; 1-based inclusive coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenePrediction {
    pub gene_id: String,
    pub contig_id: String,
    pub start: u64,
    pub end: u64,
    pub strand: Strand,
}

/// One tool's hit for a gene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub gene_id: String,
    pub tool: String,
    pub subject_id: String,
    pub score: f64,
    pub evalue: f64,
    pub description: String,
}

/// A prediction joined with all of its evidence, evidence sorted by
/// (evalue asc, score desc, tool, subject_id).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub prediction: GenePrediction,
    pub evidences: Vec<Evidence>,
}

impl AnnotationRecord {
    /// Best evidence = first under the global sort key.
    pub fn best(&self) -> Option<&Evidence> {
        self.evidences.first()
    }
}

/// Merge result: records in (contig_id, start, gene_id) order plus evidence
/// rows whose gene was never predicted (a warning channel, not an error).
#[derive(Debug, Clone, PartialEq)]
pub struct MergeOutcome {
    pub records: Vec<AnnotationRecord>,
    pub orphans: Vec<Evidence>,
}

fn evidence_sort_key(e: &Evidence) -> (f64, f64, &str, &str) {
    (e.evalue, -e.score, e.tool.as_str(), e.subject_id.as_str())
}

fn cmp_evidence(a: &Evidence, b: &Evidence) -> std::cmp::Ordering {
    let (ae, asc, at, asub) = evidence_sort_key(a);
    let (be, bsc, bt, bsub) = evidence_sort_key(b);
    ae.total_cmp(&be)
        .then_with(|| asc.total_cmp(&bsc))
        .then_with(|| at.cmp(bt))
        .then_with(|| asub.cmp(bsub))
}

/// Join predictions with evidence from all tools and scatter parts.
/// Zero-evidence genes yield records with empty evidence lists.
pub fn merge_annotations(
    predictions: Vec<GenePrediction>,
    evidence_sets: Vec<Vec<Evidence>>,
) -> Result<MergeOutcome, AnnotationError> {
    use std::collections::HashMap;

    let mut index: HashMap<&str, usize> = HashMap::with_capacity(predictions.len());
    for (i, p) in predictions.iter().enumerate() {
        if index.insert(p.gene_id.as_str(), i).is_some() {
            return Err(AnnotationError::DuplicateGeneAcrossParts(p.gene_id.clone()));
        }
    }

    let mut buckets: Vec<Vec<Evidence>> = vec![Vec::new(); predictions.len()];
    let mut orphans = Vec::new();
    for set in evidence_sets {
        for ev in set {
            match index.get(ev.gene_id.as_str()) {
                Some(&i) => buckets[i].push(ev),
                None => orphans.push(ev),
            }
        }
    }

    let mut records: Vec<AnnotationRecord> = predictions
        .into_iter()
        .zip(buckets)
        .map(|(prediction, mut evidences)| {
            evidences.sort_by(cmp_evidence);
            AnnotationRecord { prediction, evidences }
        })
        .collect();
    records.sort_by(|a, b| {
        (a.prediction.contig_id.as_str(), a.prediction.start, a.prediction.gene_id.as_str()).cmp(&(
            b.prediction.contig_id.as_str(),
            b.prediction.start,
            b.prediction.gene_id.as_str(),
        ))
    });
    orphans.sort_by(|a, b| a.gene_id.cmp(&b.gene_id).then_with(|| cmp_evidence(a, b)));
    Ok(MergeOutcome { records, orphans })
}

fn split_row(line: &str, want: usize, lineno: u64) -> Result<Vec<&str>, AnnotationError> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != want {
        return Err(AnnotationError::MalformedRow {
            line: lineno,
            msg: format!("expected {want} tab-separated fields, found {}", fields.len()),
        });
    }
    Ok(fields)
}

/// Parse the predictions table; duplicate gene ids and inverted coordinates
/// are rejected here.
pub fn parse_gene_predictions(input: impl BufRead) -> Result<Vec<GenePrediction>, AnnotationError> {
    let mut out: Vec<GenePrediction> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (no, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = no as u64 + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f = split_row(&line, 5, lineno)?;
        let parse_u64 = |s: &str, what: &str| {
            s.parse::<u64>().map_err(|_| AnnotationError::MalformedRow {
                line: lineno,
                msg: format!("invalid {what} {s:?}"),
            })
        };
        let start = parse_u64(f[2], "start")?;
        let end = parse_u64(f[3], "end")?;
        if start < 1 {
            return Err(AnnotationError::MalformedRow { line: lineno, msg: "start must be >= 1".into() });
        }
        if end < start {
            return Err(AnnotationError::EndBeforeStart { id: f[0].to_string(), start, end });
        }
        let strand = match f[4] {
            "+" => Strand::Forward,
            "-" => Strand::Reverse,
            s => {
                return Err(AnnotationError::MalformedRow {
                    line: lineno,
                    msg: format!("invalid strand {s:?}"),
                })
            }
        };
        if f[0].is_empty() || f[1].is_empty() {
            return Err(AnnotationError::MalformedRow { line: lineno, msg: "empty id field".into() });
        }
        if !seen.insert(f[0].to_string()) {
            return Err(AnnotationError::DuplicateGene { line: lineno, id: f[0].to_string() });
        }
        out.push(GenePrediction {
            gene_id: f[0].to_string(),
            contig_id: f[1].to_string(),
            start,
            end,
            strand,
        });
    }
    Ok(out)
}

/// Parse one tool's evidence table, stamping the tool name on every row.
/// Rows for unknown genes are kept; the merge step resolves them.
pub fn parse_evidence_table(input: impl BufRead, tool: &str) -> Result<Vec<Evidence>, AnnotationError> {
    let mut out = Vec::new();
    for (no, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = no as u64 + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f = split_row(&line, 5, lineno)?;
        let parse_f64 = |s: &str, what: &str| {
            s.parse::<f64>().map_err(|_| AnnotationError::MalformedRow {
                line: lineno,
                msg: format!("invalid {what} {s:?}"),
            })
        };
        let score = parse_f64(f[2], "score")?;
        let evalue = parse_f64(f[3], "evalue")?;
        if evalue < 0.0 {
            return Err(AnnotationError::NegativeEvalue { line: lineno, value: evalue });
        }
        if f[0].is_empty() {
            return Err(AnnotationError::MalformedRow { line: lineno, msg: "empty gene id".into() });
        }
        out.push(Evidence {
            gene_id: f[0].to_string(),
            tool: tool.to_string(),
            subject_id: f[1].to_string(),
            score,
            evalue,
            description: f[4].to_string(),
        });
    }
    Ok(out)
}

/// Flat TSV export; byte-deterministic for equal inputs. Zero-evidence
/// records leave the best_* columns empty.
pub fn export_tsv(records: &[AnnotationRecord], mut out: impl Write) -> std::io::Result<()> {
    writeln!(
        out,
        "#gene_id\tcontig_id\tstart\tend\tstrand\tn_evidence\tbest_tool\tbest_subject\tbest_evalue\tdescriptions"
    )?;
    for rec in records {
        let p = &rec.prediction;
        let (best_tool, best_subject, best_evalue) = match rec.best() {
            Some(b) => (b.tool.as_str(), b.subject_id.as_str(), fmt_f64(b.evalue)),
            None => ("", "", String::new()),
        };
        let descriptions: Vec<&str> = rec.evidences.iter().map(|e| e.description.as_str()).collect();
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            p.gene_id,
            p.contig_id,
            p.start,
            p.end,
            p.strand.symbol(),
            rec.evidences.len(),
            best_tool,
            best_subject,
            best_evalue,
            descriptions.join(";")
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct MetarepDoc<'a> {
    id: &'a str,
    library: &'a str,
    common_name: &'a str,
    hit_ids: Vec<&'a str>,
    evalues: Vec<f64>,
    tools: Vec<&'a str>,
}

/// Metarep-style JSONL export: one document per record, same ordering as
/// the TSV export.
pub fn export_metarep_jsonl(
    records: &[AnnotationRecord],
    library_id: &str,
    mut out: impl Write,
) -> std::io::Result<()> {
    for rec in records {
        let doc = MetarepDoc {
            id: &rec.prediction.gene_id,
            library: library_id,
            common_name: rec.best().map(|b| b.description.as_str()).unwrap_or("unknown"),
            hit_ids: rec.evidences.iter().map(|e| e.subject_id.as_str()).collect(),
            evalues: rec.evidences.iter().map(|e| e.evalue).collect(),
            tools: rec.evidences.iter().map(|e| e.tool.as_str()).collect(),
        };
        serde_json::to_writer(&mut out, &doc)?;
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(gene: &str, contig: &str, start: u64) -> GenePrediction {
        GenePrediction {
            gene_id: gene.to_string(),
            contig_id: contig.to_string(),
            start,
            end: start + 89,
            strand: Strand::Forward,
        }
    }

    fn ev(gene: &str, tool: &str, subject: &str, score: f64, evalue: f64, desc: &str) -> Evidence {
        Evidence {
            gene_id: gene.to_string(),
            tool: tool.to_string(),
            subject_id: subject.to_string(),
            score,
            evalue,
            description: desc.to_string(),
        }
    }

    #[test]
    fn parse_prediction_row() {
        let preds = parse_gene_predictions("g1\tc1\t10\t99\t+\n".as_bytes()).unwrap();
        assert_eq!(preds[0].gene_id, "g1");
        assert_eq!((preds[0].start, preds[0].end), (10, 99));
    }

    #[test]
    fn duplicate_prediction_rejected() {
        let err = parse_gene_predictions("g1\tc1\t1\t9\t+\ng1\tc2\t1\t9\t-\n".as_bytes()).unwrap_err();
        assert!(matches!(err, AnnotationError::DuplicateGene { .. }));
    }

    #[test]
    fn inverted_coordinates_rejected() {
        let err = parse_gene_predictions("g1\tc1\t99\t10\t+\n".as_bytes()).unwrap_err();
        assert!(matches!(err, AnnotationError::EndBeforeStart { .. }));
    }

    #[test]
    fn evidence_parse_and_negative_evalue() {
        let evs = parse_evidence_table("g1\tsp|P1\t300.5\t1e-30\thypothetical thing\n".as_bytes(), "blast")
            .unwrap();
        assert_eq!(evs[0].tool, "blast");
        assert_eq!(evs[0].evalue, 1e-30);
        assert!(parse_evidence_table("".as_bytes(), "blast").unwrap().is_empty());
        let err = parse_evidence_table("g1\ts\t1\t-1\tx\n".as_bytes(), "blast").unwrap_err();
        assert!(matches!(err, AnnotationError::NegativeEvalue { .. }));
    }

    #[test]
    fn merge_sorts_evidence_and_keeps_empty_records() {
        let preds = vec![pred("g2", "c1", 500), pred("g1", "c1", 10)];
        let evidence = vec![
            vec![ev("g1", "enzyme", "E2", 50.0, 1e-5, "lipase")],
            vec![ev("g1", "blast", "P1", 300.0, 1e-30, "oxidase")],
        ];
        let out = merge_annotations(preds, evidence).unwrap();
        assert_eq!(out.records.len(), 2);
        // sorted by (contig, start, gene): g1 first
        assert_eq!(out.records[0].prediction.gene_id, "g1");
        assert_eq!(out.records[0].evidences.len(), 2);
        assert_eq!(out.records[0].best().unwrap().subject_id, "P1"); // smaller evalue first
        assert!(out.records[1].evidences.is_empty());
        assert!(out.orphans.is_empty());
    }

    #[test]
    fn orphans_reported_not_dropped() {
        let out = merge_annotations(
            vec![pred("g1", "c1", 1)],
            vec![vec![ev("ghost", "blast", "P9", 10.0, 1.0, "x")]],
        )
        .unwrap();
        assert_eq!(out.orphans.len(), 1);
        assert_eq!(out.records[0].evidences.len(), 0);
    }

    #[test]
    fn duplicate_across_parts_is_an_error() {
        let err = merge_annotations(vec![pred("g1", "c1", 1), pred("g1", "c2", 1)], vec![]).unwrap_err();
        assert!(matches!(err, AnnotationError::DuplicateGeneAcrossParts(_)));
    }

    #[test]
    fn merge_is_permutation_invariant_in_evidence_sets() {
        let preds = vec![pred("g1", "c1", 1), pred("g2", "c1", 200)];
        let a = vec![ev("g1", "blast", "P1", 10.0, 1e-3, "a"), ev("g2", "blast", "P2", 20.0, 1e-9, "b")];
        let b = vec![ev("g1", "enzyme", "E1", 99.0, 1e-3, "c")];
        let out1 = merge_annotations(preds.clone(), vec![a.clone(), b.clone()]).unwrap();
        let out2 = merge_annotations(preds, vec![b, a]).unwrap();
        assert_eq!(out1, out2);
    }

    #[test]
    fn evidence_conservation() {
        let preds = vec![pred("g1", "c1", 1)];
        let sets = vec![
            vec![ev("g1", "t1", "s", 1.0, 0.1, ""), ev("gx", "t1", "s", 1.0, 0.2, "")],
            vec![ev("g1", "t2", "s", 1.0, 0.3, "")],
        ];
        let n_inputs: usize = sets.iter().map(|s| s.len()).sum();
        let out = merge_annotations(preds, sets).unwrap();
        let in_records: usize = out.records.iter().map(|r| r.evidences.len()).sum();
        assert_eq!(in_records + out.orphans.len(), n_inputs);
    }

    #[test]
    fn tsv_export_shape_and_determinism() {
        let out = merge_annotations(
            vec![pred("g1", "c1", 10), pred("g2", "c1", 500)],
            vec![vec![
                ev("g1", "blast", "P1", 300.0, 1e-30, "oxidase"),
                ev("g1", "enzyme", "E2", 50.0, 1e-5, "lipase"),
            ]],
        )
        .unwrap();
        let mut buf1 = Vec::new();
        export_tsv(&out.records, &mut buf1).unwrap();
        let text = String::from_utf8(buf1.clone()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0].split('\t').count(), 10);
        assert_eq!(lines[1], "g1\tc1\t10\t99\t+\t2\tblast\tP1\t1e-30\toxidase;lipase");
        assert_eq!(lines[2], "g2\tc1\t500\t589\t+\t0\t\t\t\t");
        let mut buf2 = Vec::new();
        export_tsv(&out.records, &mut buf2).unwrap();
        assert_eq!(buf1, buf2);
    }

    #[test]
    fn empty_records_export_header_only() {
        let mut buf = Vec::new();
        export_tsv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1);
    }

    #[test]
    fn metarep_jsonl_fields() {
        let out = merge_annotations(
            vec![pred("g1", "c1", 10), pred("g2", "c2", 20)],
            vec![vec![ev("g1", "blast", "P1", 300.0, 1e-30, "oxidase")]],
        )
        .unwrap();
        let mut buf = Vec::new();
        export_metarep_jsonl(&out.records, "lib1", &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let d1: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(d1["id"], "g1");
        assert_eq!(d1["library"], "lib1");
        assert_eq!(d1["common_name"], "oxidase");
        assert_eq!(d1["hit_ids"], serde_json::json!(["P1"]));
        let d2: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
        assert_eq!(d2["common_name"], "unknown");
        assert_eq!(d2["hit_ids"], serde_json::json!([]));
    }
}
