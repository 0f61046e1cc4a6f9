use mw_harmonics_cli::output::{fmt_list, fmt_num};
use proptest::prelude::*;

proptest! {
    #[test]
    fn numbers_round_trip_to_twelve_digits(m in -1.0f64..1.0, e in -300i32..300) {
        let x = m * 10f64.powi(e);
        let back: f64 = fmt_num(x).parse().unwrap();
        prop_assert!((back - x).abs() <= 5e-12 * x.abs(), "{} -> {}", x, fmt_num(x));
    }

    #[test]
    fn lists_split_back(xs in proptest::collection::vec(-1e6f64..1e6, 1..8)) {
        let s = fmt_list(&xs);
        let back: Vec<f64> = s.split(';').map(|t| t.parse().unwrap()).collect();
        prop_assert_eq!(back.len(), xs.len());
        for (a, b) in back.iter().zip(&xs) {
            prop_assert!((a - b).abs() <= 5e-12 * b.abs().max(1e-300));
        }
    }
}

#[test]
fn non_finite_values_are_spelled_out() {
    assert_eq!(fmt_num(f64::NEG_INFINITY), "-inf");
    assert_eq!(fmt_num(f64::NAN), "nan");
    assert_eq!("inf".parse::<f64>().unwrap(), f64::INFINITY);
}
