//! Count-balanced scatter partitioning and its gather inverse.
//!
//! Record j goes to partition j mod n, so sizes differ by at most one and
//! `merge_parts` can reconstruct the original order by round-robin
//! interleaving. For partitions whose contents were filtered in between,
//! the interleave is still well-defined and deterministic, just no longer
//! the exact inverse.

use super::{SeqError, SequenceRecord};

/// One scatter part. Carries its index and the split width so a gather can
/// validate completeness.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub index: usize,
    pub n_parts: usize,
    pub records: Vec<SequenceRecord>,
}

/// Deal records round-robin into `n_parts` partitions.
pub fn split_records(records: Vec<SequenceRecord>, n_parts: usize) -> Result<Vec<Partition>, SeqError> {
    if n_parts == 0 {
        return Err(SeqError::ZeroParts);
    }
    let mut parts: Vec<Partition> = (0..n_parts)
        .map(|index| Partition { index, n_parts, records: Vec::new() })
        .collect();
    for (j, rec) in records.into_iter().enumerate() {
        parts[j % n_parts].records.push(rec);
    }
    Ok(parts)
}

/// Inverse of [`split_records`]: interleave partitions back into dataset
/// order. Partitions may arrive in any order but must cover exactly the
/// indices 0..n_parts.
pub fn merge_parts(mut parts: Vec<Partition>) -> Result<Vec<SequenceRecord>, SeqError> {
    let n_parts = match parts.first() {
        Some(p) => p.n_parts,
        None => return Err(SeqError::ZeroParts),
    };
    for p in &parts {
        if p.n_parts != n_parts {
            return Err(SeqError::MixedPartCounts(n_parts, p.n_parts));
        }
        if p.index >= n_parts {
            return Err(SeqError::PartIndexOutOfRange { index: p.index, n_parts });
        }
    }
    parts.sort_by_key(|p| p.index);
    for (want, p) in parts.iter().enumerate() {
        if p.index > want {
            return Err(SeqError::MissingPartIndex(want));
        }
        if p.index < want {
            return Err(SeqError::DuplicatePartIndex(p.index));
        }
    }
    if parts.len() < n_parts {
        return Err(SeqError::MissingPartIndex(parts.len()));
    }

    let total: usize = parts.iter().map(|p| p.records.len()).sum();
    let mut slots: Vec<std::vec::IntoIter<SequenceRecord>> =
        parts.into_iter().map(|p| p.records.into_iter()).collect();
    let mut merged = Vec::with_capacity(total);
    let mut exhausted = 0;
    while exhausted < slots.len() {
        exhausted = 0;
        for it in slots.iter_mut() {
            match it.next() {
                Some(rec) => merged.push(rec),
                None => exhausted += 1,
            }
        }
    }
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recs(n: usize) -> Vec<SequenceRecord> {
        (0..n)
            .map(|i| SequenceRecord::new(format!("r{i}"), format!("d{i}"), "ACGT", None).unwrap())
            .collect()
    }

    #[test]
    fn even_split_sizes() {
        let parts = split_records(recs(6), 3).unwrap();
        assert_eq!(parts.iter().map(|p| p.records.len()).collect::<Vec<_>>(), [2, 2, 2]);
    }

    #[test]
    fn uneven_split_sizes_differ_by_at_most_one() {
        let parts = split_records(recs(7), 3).unwrap();
        assert_eq!(parts.iter().map(|p| p.records.len()).collect::<Vec<_>>(), [3, 2, 2]);
    }

    #[test]
    fn single_part_is_identity() {
        let input = recs(5);
        let parts = split_records(input.clone(), 1).unwrap();
        assert_eq!(parts[0].records, input);
        assert_eq!(merge_parts(parts).unwrap(), input);
    }

    #[test]
    fn zero_parts_is_an_error() {
        assert!(matches!(split_records(recs(3), 0), Err(SeqError::ZeroParts)));
    }

    #[test]
    fn empty_partitions_allowed_when_fewer_records_than_parts() {
        let parts = split_records(recs(2), 5).unwrap();
        assert_eq!(parts.len(), 5);
        assert_eq!(parts.iter().filter(|p| p.records.is_empty()).count(), 3);
        assert_eq!(merge_parts(parts).unwrap(), recs(2));
    }

    #[test]
    fn merge_detects_missing_index() {
        let mut parts = split_records(recs(9), 3).unwrap();
        parts.remove(1);
        assert!(matches!(merge_parts(parts), Err(SeqError::MissingPartIndex(1))));
    }

    #[test]
    fn merge_detects_duplicate_index() {
        let parts = split_records(recs(9), 3).unwrap();
        let dup = vec![parts[0].clone(), parts[0].clone(), parts[2].clone()];
        assert!(matches!(merge_parts(dup), Err(SeqError::DuplicatePartIndex(0))));
    }

    #[test]
    fn merge_accepts_shuffled_part_order() {
        let input = recs(10);
        let mut parts = split_records(input.clone(), 4).unwrap();
        parts.rotate_left(2);
        assert_eq!(merge_parts(parts).unwrap(), input);
    }

    #[test]
    fn round_trip_identity_on_random_input() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let input: Vec<SequenceRecord> = (0..100)
            .map(|i| {
                let len = rng.gen_range(0..40);
                let bases: String = (0..len)
                    .map(|_| ['A', 'C', 'G', 'T', 'N'][rng.gen_range(0..5)])
                    .collect();
                let quality =
                    rng.gen_bool(0.5).then(|| (0..len).map(|_| rng.gen_range(0..=93u8)).collect());
                SequenceRecord::new(format!("r{i}"), format!("note {i}"), bases, quality).unwrap()
            })
            .collect();
        for n in 1..=8 {
            let parts = split_records(input.clone(), n).unwrap();
            assert_eq!(merge_parts(parts).unwrap(), input, "round trip failed for n={n}");
        }
    }
}
