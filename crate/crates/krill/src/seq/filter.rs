//! Quality, length, and id-mask filters. All filters preserve input order
//! and are idempotent for fixed parameters.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{SeqError, SequenceRecord};

/// Criteria for dropping dubious or low quality reads. Checked per record in
/// the order: length, N-fraction, mean quality; the first failing criterion
/// is the one counted in the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    /// Minimum length in nucleotides (inclusive).
    pub min_length: usize,
    /// Minimum mean Phred score, in [0, 93]. Records without quality values
    /// pass this criterion vacuously (assembled contigs carry no quality).
    pub min_mean_quality: f64,
    /// Maximum tolerated fraction of N bases, in [0, 1].
    pub max_n_fraction: f64,
}

impl FilterParams {
    pub fn validate(&self) -> Result<(), SeqError> {
        if !(0.0..=93.0).contains(&self.min_mean_quality) {
            return Err(SeqError::InvalidParams(format!(
                "min_mean_quality {} outside [0, 93]",
                self.min_mean_quality
            )));
        }
        if !(0.0..=1.0).contains(&self.max_n_fraction) {
            return Err(SeqError::InvalidParams(format!(
                "max_n_fraction {} outside [0, 1]",
                self.max_n_fraction
            )));
        }
        Ok(())
    }
}

/// Rejection counts keyed by the first failing criterion.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub kept: usize,
    pub rejected_length: usize,
    pub rejected_n_fraction: usize,
    pub rejected_quality: usize,
}

impl FilterReport {
    pub fn total(&self) -> usize {
        self.kept + self.rejected_length + self.rejected_n_fraction + self.rejected_quality
    }

    /// Two-column TSV (`#reason<TAB>count`), deterministic row order.
    pub fn to_tsv(&self) -> String {
        format!(
            "#reason\tcount\nkept\t{}\nrejected_length\t{}\nrejected_n_fraction\t{}\nrejected_quality\t{}\n",
            self.kept, self.rejected_length, self.rejected_n_fraction, self.rejected_quality
        )
    }
}

/// Drop records failing the filter criteria; survivors keep input order.
pub fn quality_filter(
    records: Vec<SequenceRecord>,
    params: &FilterParams,
) -> (Vec<SequenceRecord>, FilterReport) {
    let mut kept = Vec::with_capacity(records.len());
    let mut report = FilterReport::default();
    for rec in records {
        if rec.len() < params.min_length {
            report.rejected_length += 1;
        } else if rec.n_fraction() > params.max_n_fraction {
            report.rejected_n_fraction += 1;
        } else if rec.mean_quality().is_some_and(|m| m < params.min_mean_quality) {
            report.rejected_quality += 1;
        } else {
            report.kept += 1;
            kept.push(rec);
        }
    }
    (kept, report)
}

/// Keep records of length >= `min_length` (inclusive), preserving order.
/// The dataset-size knob used for contig sets.
pub fn length_cutoff_filter(records: Vec<SequenceRecord>, min_length: usize) -> Vec<SequenceRecord> {
    records.into_iter().filter(|r| r.len() >= min_length).collect()
}

/// Result of masking: surviving records plus excluded ids that never
/// appeared in the input (reported, not an error).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskOutcome {
    pub kept: Vec<SequenceRecord>,
    pub missing_ids: Vec<String>,
}

/// Remove records whose id is in `exclude_ids`, preserving order.
pub fn mask_records(records: Vec<SequenceRecord>, exclude_ids: &BTreeSet<String>) -> MaskOutcome {
    let mut seen = BTreeSet::new();
    let mut kept = Vec::with_capacity(records.len());
    for rec in records {
        if exclude_ids.contains(&rec.id) {
            seen.insert(rec.id);
        } else {
            kept.push(rec);
        }
    }
    let missing_ids = exclude_ids.iter().filter(|id| !seen.contains(*id)).cloned().collect();
    MaskOutcome { kept, missing_ids }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, bases: &str, quality: Option<Vec<u8>>) -> SequenceRecord {
        SequenceRecord::new(id, "", bases, quality).unwrap()
    }

    fn params(min_length: usize, min_mean_quality: f64, max_n_fraction: f64) -> FilterParams {
        FilterParams { min_length, min_mean_quality, max_n_fraction }
    }

    #[test]
    fn short_record_rejected_as_length() {
        let (kept, report) = quality_filter(vec![rec("r1", &"A".repeat(100), None)], &params(150, 0.0, 1.0));
        assert!(kept.is_empty());
        assert_eq!(report.rejected_length, 1);
    }

    #[test]
    fn high_quality_record_kept() {
        let (kept, report) =
            quality_filter(vec![rec("r1", "ACGT", Some(vec![40; 4]))], &params(0, 20.0, 1.0));
        assert_eq!(kept.len(), 1);
        assert_eq!(report.kept, 1);
    }

    #[test]
    fn first_failing_criterion_wins() {
        // fails length AND quality; counted under length only
        let (_, report) = quality_filter(vec![rec("r1", "AC", Some(vec![2, 2]))], &params(10, 30.0, 1.0));
        assert_eq!(report.rejected_length, 1);
        assert_eq!(report.rejected_quality, 0);
    }

    #[test]
    fn record_without_quality_passes_quality_vacuously() {
        let (kept, _) = quality_filter(vec![rec("c1", "ACGT", None)], &params(0, 40.0, 1.0));
        assert_eq!(kept.len(), 1);
    }

    #[test]
    fn n_fraction_boundary_is_inclusive() {
        // 1 N of 4 bases = 0.25; max 0.25 keeps it
        let (kept, _) = quality_filter(vec![rec("r1", "ACGN", None)], &params(0, 0.0, 0.25));
        assert_eq!(kept.len(), 1);
        let (kept, report) = quality_filter(vec![rec("r1", "ACGN", None)], &params(0, 0.0, 0.24));
        assert!(kept.is_empty());
        assert_eq!(report.rejected_n_fraction, 1);
    }

    #[test]
    fn length_cutoff_inclusive_at_boundary() {
        let contigs = vec![rec("c300", &"A".repeat(300), None), rec("c299", &"A".repeat(299), None)];
        let kept = length_cutoff_filter(contigs, 300);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].id, "c300");
    }

    #[test]
    fn cutoff_zero_is_identity() {
        let contigs = vec![rec("a", "", None), rec("b", "ACGT", None)];
        assert_eq!(length_cutoff_filter(contigs.clone(), 0), contigs);
    }

    #[test]
    fn filters_are_idempotent() {
        let recs: Vec<_> = (0..50)
            .map(|i| rec(&format!("r{i}"), &"ACGTN"[..(i % 5) + 1].repeat(i % 7 + 1), Some(vec![(i % 90) as u8; ((i % 5) + 1) * (i % 7 + 1)])))
            .collect();
        let p = params(4, 25.0, 0.2);
        let (once, _) = quality_filter(recs, &p);
        let (twice, report) = quality_filter(once.clone(), &p);
        assert_eq!(once, twice);
        assert_eq!(report.kept, once.len());
    }

    #[test]
    fn mask_empty_exclude_is_identity() {
        let recs = vec![rec("r1", "AC", None), rec("r2", "GT", None)];
        let out = mask_records(recs.clone(), &BTreeSet::new());
        assert_eq!(out.kept, recs);
        assert!(out.missing_ids.is_empty());
    }

    #[test]
    fn mask_all_yields_empty() {
        let recs = vec![rec("r1", "AC", None), rec("r2", "GT", None)];
        let exclude: BTreeSet<_> = ["r1", "r2"].iter().map(|s| s.to_string()).collect();
        let out = mask_records(recs, &exclude);
        assert!(out.kept.is_empty());
        assert!(out.missing_ids.is_empty());
    }

    #[test]
    fn mask_reports_absent_ids_and_preserves_order() {
        let recs = vec![rec("r1", "AC", None), rec("r2", "GT", None), rec("r3", "AA", None)];
        let exclude: BTreeSet<_> = ["r2", "zz"].iter().map(|s| s.to_string()).collect();
        let out = mask_records(recs, &exclude);
        assert_eq!(out.kept.iter().map(|r| r.id.as_str()).collect::<Vec<_>>(), ["r1", "r3"]);
        assert_eq!(out.missing_ids, vec!["zz".to_string()]);
    }

    #[test]
    fn brute_force_oracle_over_random_corpus() {
        // independent per-record recomputation of all three criteria
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let alphabet = [b'A', b'C', b'G', b'T', b'N'];
        let recs: Vec<SequenceRecord> = (0..500)
            .map(|i| {
                let len = rng.gen_range(0..200);
                let bases: String =
                    (0..len).map(|_| alphabet[rng.gen_range(0..alphabet.len())] as char).collect();
                let quality = if rng.gen_bool(0.7) {
                    Some((0..len).map(|_| rng.gen_range(0..=93u8)).collect())
                } else {
                    None
                };
                SequenceRecord::new(format!("r{i}"), "", bases, quality).unwrap()
            })
            .collect();
        let p = params(50, 30.0, 0.3);
        let (kept, report) = quality_filter(recs.clone(), &p);

        let mut expect_kept = Vec::new();
        let (mut rl, mut rn, mut rq) = (0, 0, 0);
        for r in &recs {
            if r.bases.len() < 50 {
                rl += 1;
                continue;
            }
            let nfrac = r.bases.chars().filter(|c| *c == 'N' || *c == 'n').count() as f64
                / r.bases.len() as f64;
            if nfrac > 0.3 {
                rn += 1;
                continue;
            }
            if let Some(q) = &r.quality {
                let mean = q.iter().map(|v| *v as f64).sum::<f64>() / q.len().max(1) as f64;
                if !q.is_empty() && mean < 30.0 {
                    rq += 1;
                    continue;
                }
            }
            expect_kept.push(r.clone());
        }
        assert_eq!(kept, expect_kept);
        assert_eq!(
            (report.rejected_length, report.rejected_n_fraction, report.rejected_quality),
            (rl, rn, rq)
        );
        assert_eq!(report.total(), 500);
    }
}
