//! Sequence records, streaming FASTA/FASTQ I/O, filtering, masking, and
//! scatter/gather partitioning.

mod filter;
mod io;
mod partition;

pub use filter::{length_cutoff_filter, mask_records, quality_filter, FilterParams, FilterReport, MaskOutcome};
pub use io::{read_records, write_records, RecordReader};
pub use partition::{merge_parts, split_records, Partition};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One read or contig. `quality` holds Phred scores (0–93), present for
/// FASTQ-born records and absent for assembled contigs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub id: String,
    pub description: String,
    pub bases: String,
    pub quality: Option<Vec<u8>>,
}

impl SequenceRecord {
    /// Build a record, checking the type invariants: non-empty whitespace-free
    /// id, bases over {A,C,G,T,N} (either case), quality length = base length.
    pub fn new(
        id: impl Into<String>,
        description: impl Into<String>,
        bases: impl Into<String>,
        quality: Option<Vec<u8>>,
    ) -> Result<Self, SeqError> {
        let rec = SequenceRecord {
            id: id.into(),
            description: description.into(),
            bases: bases.into(),
            quality,
        };
        rec.check()?;
        Ok(rec)
    }

    pub(crate) fn check(&self) -> Result<(), SeqError> {
        if self.id.is_empty() || self.id.contains(char::is_whitespace) {
            return Err(SeqError::InvalidRecord {
                id: self.id.clone(),
                msg: "id must be a non-empty token without whitespace".into(),
            });
        }
        if let Some(b) = self.bases.bytes().find(|b| !is_base(*b)) {
            return Err(SeqError::InvalidRecord {
                id: self.id.clone(),
                msg: format!("invalid base character {:?}", b as char),
            });
        }
        if let Some(q) = &self.quality {
            if q.len() != self.bases.len() {
                return Err(SeqError::QualityLengthMismatch { line: 0, id: self.id.clone() });
            }
            if let Some(s) = q.iter().find(|s| **s > 93) {
                return Err(SeqError::InvalidRecord {
                    id: self.id.clone(),
                    msg: format!("Phred score {s} out of range 0-93"),
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.bases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bases.is_empty()
    }

    /// Fraction of bases that are N/n; 0 for an empty sequence.
    pub fn n_fraction(&self) -> f64 {
        if self.bases.is_empty() {
            return 0.0;
        }
        let n = self.bases.bytes().filter(|b| *b == b'N' || *b == b'n').count();
        n as f64 / self.bases.len() as f64
    }

    /// Mean Phred score, if the record carries quality values.
    pub fn mean_quality(&self) -> Option<f64> {
        let q = self.quality.as_ref()?;
        if q.is_empty() {
            return None;
        }
        Some(q.iter().map(|s| *s as f64).sum::<f64>() / q.len() as f64)
    }
}

fn is_base(b: u8) -> bool {
    matches!(b, b'A' | b'C' | b'G' | b'T' | b'N' | b'a' | b'c' | b'g' | b't' | b'n')
}

/// On-disk sequence format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeqFormat {
    Fasta,
    Fastq,
}

impl SeqFormat {
    /// Pick a format from a file extension (`fa`, `fasta`, `fna` / `fq`,
    /// `fastq`), falling back to `None` for anything else.
    pub fn from_extension(path: &std::path::Path) -> Option<SeqFormat> {
        match path.extension()?.to_str()? {
            "fa" | "fasta" | "fna" => Some(SeqFormat::Fasta),
            "fq" | "fastq" => Some(SeqFormat::Fastq),
            _ => None,
        }
    }

    pub fn extension(&self) -> &'static str {
        match self {
            SeqFormat::Fasta => "fasta",
            SeqFormat::Fastq => "fastq",
        }
    }
}

#[derive(Debug, Error)]
pub enum SeqError {
    #[error("line {line}: malformed record: {msg}")]
    Malformed { line: u64, msg: String },
    #[error("line {line}: duplicate record id {id:?}")]
    DuplicateId { line: u64, id: String },
    #[error("line {line}: quality length does not match base length for {id:?}")]
    QualityLengthMismatch { line: u64, id: String },
    #[error("record {id:?}: {msg}")]
    InvalidRecord { id: String, msg: String },
    #[error("record {id:?} has no quality values, cannot write FASTQ")]
    MissingQuality { id: String },
    #[error("invalid filter parameters: {0}")]
    InvalidParams(String),
    #[error("n_parts must be >= 1")]
    ZeroParts,
    #[error("missing partition index {0}")]
    MissingPartIndex(usize),
    #[error("duplicate partition index {0}")]
    DuplicatePartIndex(usize),
    #[error("partition index {index} out of range for n_parts {n_parts}")]
    PartIndexOutOfRange { index: usize, n_parts: usize },
    #[error("partitions disagree on n_parts ({0} vs {1})")]
    MixedPartCounts(usize, usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
