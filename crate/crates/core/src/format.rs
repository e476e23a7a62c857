//! Text encodings shared by the CSV and JSON outputs.

/// 17 significant digits in scientific notation; parses back to the same
/// `f64` bit pattern.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn parse_float(s: &str) -> Result<f64, String> {
    let x: f64 = s.trim().parse().map_err(|_| format!("not a number: `{s}`"))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("non-finite value `{s}`"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn seventeen_digits() {
        assert_eq!(fmt_float(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_float(2.0), "2.0000000000000000e0");
    }

    proptest! {
        #[test]
        fn round_trips_bits(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            prop_assert_eq!(parse_float(&fmt_float(x)).unwrap().to_bits(), x.to_bits());
        }
    }
}
