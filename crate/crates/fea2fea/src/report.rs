//! Small reporting helpers shared by the pipelines and the CLI: summary
//! statistics and a stable config fingerprint.

/// Mean and population standard deviation. Empty input yields (0, 0).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// FNV-1a over the bytes, hex-encoded. Used to fingerprint config echoes so
/// run directories are self-describing without a crypto dependency.
pub fn fingerprint(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn mean_std_matches_hand_computation() {
        let (m, s) = mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_relative_eq!(m, 5.0, epsilon = 1e-12);
        assert_relative_eq!(s, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn mean_std_degenerate_cases() {
        assert_eq!(mean_std(&[]), (0.0, 0.0));
        let (m, s) = mean_std(&[0.7]);
        assert_eq!((m, s), (0.7, 0.0));
        let (_, s) = mean_std(&[0.3, 0.3, 0.3]);
        assert_eq!(s, 0.0);
    }

    #[test]
    fn fingerprint_reference_values() {
        // Published FNV-1a 64-bit test vectors.
        assert_eq!(fingerprint(b""), "cbf29ce484222325");
        assert_eq!(fingerprint(b"a"), "af63dc4c8601ec8c");
        assert_eq!(fingerprint(b"foobar"), "85944171f73967e8");
    }

    #[test]
    fn fingerprint_is_input_sensitive() {
        assert_ne!(fingerprint(b"{\"bins\":6}"), fingerprint(b"{\"bins\":7}"));
    }
}
