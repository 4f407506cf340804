/// Shortest round-trip decimal form of a float, as used in all text exports.
///
/// Delegates to the JSON serializer so TSV columns and JSONL fields format
/// numbers identically (e.g. `1e-30`, `40.0`, `0.001`).
pub fn fmt_f64(v: f64) -> String {
    serde_json::to_string(&v).unwrap_or_else(|_| v.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_formatting_is_compact() {
        assert_eq!(fmt_f64(1e-30), "1e-30");
        assert_eq!(fmt_f64(40.0), "40.0");
        assert_eq!(fmt_f64(0.001), "0.001");
        assert_eq!(fmt_f64(0.0), "0.0");
    }
}
