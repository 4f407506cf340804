//! Streaming FASTA/FASTQ parsing and canonical writing.
//!
//! FASTA: `>`id[ ws description], base lines until the next `>`.
//! FASTQ: strict 4-line records, quality at ASCII offset 33.
//! Canonical output is one base line per record with LF line endings.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use super::{is_base, SeqError, SeqFormat, SequenceRecord};

const PHRED_OFFSET: u8 = 33;

/// Streaming reader: yields records one at a time without buffering the
/// whole input. Seen ids are remembered to detect duplicates.
pub struct RecordReader<R: BufRead> {
    input: R,
    format: SeqFormat,
    line_no: u64,
    seen_ids: HashSet<String>,
    /// FASTA: header line carried over from the previous record.
    pending_header: Option<(u64, String)>,
    done: bool,
}

impl<R: BufRead> RecordReader<R> {
    pub fn new(input: R, format: SeqFormat) -> Self {
        RecordReader {
            input,
            format,
            line_no: 0,
            seen_ids: HashSet::new(),
            pending_header: None,
            done: false,
        }
    }

    /// Next line with the trailing newline (and any `\r`) removed;
    /// `None` at end of input.
    fn next_line(&mut self) -> Result<Option<String>, SeqError> {
        let mut buf = String::new();
        let n = self.input.read_line(&mut buf)?;
        if n == 0 {
            return Ok(None);
        }
        self.line_no += 1;
        while buf.ends_with('\n') || buf.ends_with('\r') {
            buf.pop();
        }
        Ok(Some(buf))
    }

    fn register_id(&mut self, id: &str, line: u64) -> Result<(), SeqError> {
        if !self.seen_ids.insert(id.to_string()) {
            return Err(SeqError::DuplicateId { line, id: id.to_string() });
        }
        Ok(())
    }

    fn next_fasta(&mut self) -> Result<Option<SequenceRecord>, SeqError> {
        let (header_line, header) = match self.pending_header.take() {
            Some(h) => h,
            None => loop {
                match self.next_line()? {
                    None => return Ok(None),
                    Some(l) if l.is_empty() => continue,
                    Some(l) if l.starts_with('>') => break (self.line_no, l),
                    Some(l) => {
                        return Err(SeqError::Malformed {
                            line: self.line_no,
                            msg: format!("expected '>' header, found {:?}", truncate(&l)),
                        })
                    }
                }
            },
        };
        let (id, description) = split_header(&header[1..]);
        if id.is_empty() {
            return Err(SeqError::Malformed { line: header_line, msg: "empty record id".into() });
        }
        self.register_id(&id, header_line)?;

        let mut bases = String::new();
        loop {
            match self.next_line()? {
                None => break,
                Some(l) if l.is_empty() => continue,
                Some(l) if l.starts_with('>') => {
                    self.pending_header = Some((self.line_no, l));
                    break;
                }
                Some(l) => {
                    if let Some(b) = l.bytes().find(|b| !is_base(*b)) {
                        return Err(SeqError::Malformed {
                            line: self.line_no,
                            msg: format!("invalid base character {:?}", b as char),
                        });
                    }
                    bases.push_str(&l);
                }
            }
        }
        Ok(Some(SequenceRecord { id, description, bases, quality: None }))
    }

    fn next_fastq(&mut self) -> Result<Option<SequenceRecord>, SeqError> {
        let header = loop {
            match self.next_line()? {
                None => return Ok(None),
                Some(l) if l.is_empty() => continue,
                Some(l) => break l,
            }
        };
        let header_line = self.line_no;
        if !header.starts_with('@') {
            return Err(SeqError::Malformed {
                line: header_line,
                msg: format!("expected '@' header, found {:?}", truncate(&header)),
            });
        }
        let (id, description) = split_header(&header[1..]);
        if id.is_empty() {
            return Err(SeqError::Malformed { line: header_line, msg: "empty record id".into() });
        }
        self.register_id(&id, header_line)?;

        let bases = self.require_line("base line")?;
        if let Some(b) = bases.bytes().find(|b| !is_base(*b)) {
            return Err(SeqError::Malformed {
                line: self.line_no,
                msg: format!("invalid base character {:?}", b as char),
            });
        }
        let plus = self.require_line("'+' separator")?;
        if !plus.starts_with('+') {
            return Err(SeqError::Malformed {
                line: self.line_no,
                msg: format!("expected '+' separator, found {:?}", truncate(&plus)),
            });
        }
        let qual_line = self.require_line("quality line")?;
        if qual_line.len() != bases.len() {
            return Err(SeqError::QualityLengthMismatch { line: self.line_no, id });
        }
        let mut quality = Vec::with_capacity(qual_line.len());
        for b in qual_line.bytes() {
            if !(PHRED_OFFSET..=PHRED_OFFSET + 93).contains(&b) {
                return Err(SeqError::Malformed {
                    line: self.line_no,
                    msg: format!("quality character {:?} outside Phred+33 range", b as char),
                });
            }
            quality.push(b - PHRED_OFFSET);
        }
        Ok(Some(SequenceRecord { id, description, bases, quality: Some(quality) }))
    }

    fn require_line(&mut self, what: &str) -> Result<String, SeqError> {
        match self.next_line()? {
            Some(l) => Ok(l),
            None => Err(SeqError::Malformed {
                line: self.line_no + 1,
                msg: format!("truncated record: missing {what}"),
            }),
        }
    }
}

impl<R: BufRead> Iterator for RecordReader<R> {
    type Item = Result<SequenceRecord, SeqError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let res = match self.format {
            SeqFormat::Fasta => self.next_fasta(),
            SeqFormat::Fastq => self.next_fastq(),
        };
        match res {
            Ok(Some(rec)) => Some(Ok(rec)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

fn split_header(rest: &str) -> (String, String) {
    match rest.split_once(char::is_whitespace) {
        Some((id, desc)) => (id.to_string(), desc.trim_start().to_string()),
        None => (rest.to_string(), String::new()),
    }
}

fn truncate(s: &str) -> String {
    if s.len() > 40 {
        format!("{}...", &s[..40])
    } else {
        s.to_string()
    }
}

/// Parse an entire stream into memory. Streaming callers iterate a
/// [`RecordReader`] directly.
pub fn read_records(input: impl BufRead, format: SeqFormat) -> Result<Vec<SequenceRecord>, SeqError> {
    RecordReader::new(input, format).collect()
}

/// Write records in canonical form (one base line per record, LF endings).
/// FASTQ output requires quality on every record.
pub fn write_records(
    records: &[SequenceRecord],
    format: SeqFormat,
    mut out: impl Write,
) -> Result<(), SeqError> {
    for rec in records {
        match format {
            SeqFormat::Fasta => {
                if rec.description.is_empty() {
                    writeln!(out, ">{}", rec.id)?;
                } else {
                    writeln!(out, ">{} {}", rec.id, rec.description)?;
                }
                writeln!(out, "{}", rec.bases)?;
            }
            SeqFormat::Fastq => {
                let quality = rec
                    .quality
                    .as_ref()
                    .ok_or_else(|| SeqError::MissingQuality { id: rec.id.clone() })?;
                if rec.description.is_empty() {
                    writeln!(out, "@{}", rec.id)?;
                } else {
                    writeln!(out, "@{} {}", rec.id, rec.description)?;
                }
                writeln!(out, "{}", rec.bases)?;
                writeln!(out, "+")?;
                let line: String = quality.iter().map(|s| (s + PHRED_OFFSET) as char).collect();
                writeln!(out, "{line}")?;
            }
        }
    }
    Ok(())
}
