//! Text output conventions shared by every file the toolkit writes:
//! 17-significant-digit floats ('.' decimal separator), comma-separated
//! values, LF line endings. The float format round-trips exactly through
//! `str::parse::<f64>`.

/// Formats a float with 17 significant digits in scientific notation.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes one CSV record; fields are joined with commas and terminated by LF.
pub fn csv_record(fields: &[String]) -> String {
    let mut line = fields.join(",");
    line.push('\n');
    line
}

/// Splits a CSV line into fields. The formats written here never contain
/// quoted fields, so a plain split is exact.
pub fn split_record(line: &str) -> Vec<&str> {
    line.trim_end_matches('\n').split(',').collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips_exactly() {
        let cases = [
            0.0,
            1.0,
            -1.0,
            std::f64::consts::PI,
            1.0 / 3.0,
            6.02214076e23,
            -2.2250738585072014e-308,
            f64::MAX,
            5e-324,
        ];
        for &x in &cases {
            let s = format_f64(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(x.to_bits(), back.to_bits(), "{x} -> {s} -> {back}");
        }
    }

    #[test]
    fn records_use_lf_only() {
        let line = csv_record(&["a".into(), "b".into()]);
        assert_eq!(line, "a,b\n");
        assert_eq!(split_record(&line), vec!["a", "b"]);
    }

    proptest::proptest! {
        #[test]
        fn any_finite_float_round_trips(bits in proptest::prelude::any::<u64>()) {
            let x = f64::from_bits(bits);
            proptest::prop_assume!(x.is_finite());
            let back: f64 = format_f64(x).parse().unwrap();
            proptest::prop_assert_eq!(x.to_bits(), back.to_bits());
        }
    }
}
