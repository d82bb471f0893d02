use proptest::prelude::*;

use cipmon_core::vitals::{
    evaluate, format_vital_line, parse_vital_line, summarize, Classification, Thresholds, VitalKind,
    VitalSample,
};

fn kind() -> impl Strategy<Value = VitalKind> {
    prop_oneof![Just(VitalKind::HR), Just(VitalKind::TEMP), Just(VitalKind::SYS), Just(VitalKind::DIA)]
}

fn sample(kind: VitalKind, value: f64, timestamp: u64) -> VitalSample {
    VitalSample {
        device_id: "m".into(),
        kind,
        value,
        timestamp,
    }
}

#[test]
fn bounds_are_normal_for_every_kind() {
    let t = Thresholds::default();
    for kind in VitalKind::ALL {
        let band = t.band(kind).unwrap();
        for v in [band.low, band.high] {
            assert_eq!(evaluate(&sample(kind, v, 0), &t).unwrap(), Classification::Normal, "{kind} {v}");
        }
        let below = band.low - band.low.abs() * f64::EPSILON * 4.0 - f64::MIN_POSITIVE;
        assert_eq!(evaluate(&sample(kind, below, 0), &t).unwrap(), Classification::AbnormalLow);
        assert_eq!(evaluate(&sample(kind, band.high + 0.01, 0), &t).unwrap(), Classification::AbnormalHigh);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn exactly_one_classification(k in kind(), v in -1.0e9f64..1.0e9) {
        let t = Thresholds::default();
        let band = t.band(k).unwrap();
        let expected = if v < band.low {
            Classification::AbnormalLow
        } else if v > band.high {
            Classification::AbnormalHigh
        } else {
            Classification::Normal
        };
        prop_assert_eq!(evaluate(&sample(k, v, 0), &t).unwrap(), expected);
    }

    #[test]
    fn summary_bounds_and_order_independence(
        values in prop::collection::vec(-1.0e6f64..1.0e6, 1..40),
        k in kind(),
        seed in any::<u64>(),
    ) {
        let samples: Vec<_> = values.iter().enumerate().map(|(i, v)| sample(k, *v, i as u64)).collect();
        let r = summarize(7, &samples).unwrap();
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(r.min, lo);
        prop_assert_eq!(r.max, hi);
        prop_assert!(r.min <= r.mean && r.mean <= r.max);
        prop_assert_eq!(r.count, values.len());
        let naive = values.iter().sum::<f64>() / values.len() as f64;
        prop_assert!((r.mean - naive).abs() <= 1e-6 * (1.0 + naive.abs()));

        let mut shuffled = samples.clone();
        let mut s = seed;
        for i in (1..shuffled.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        prop_assert_eq!(summarize(7, &shuffled).unwrap(), r);
    }

    #[test]
    fn parse_format_parse(k in kind(), v in -1.0e4f64..1.0e4, ts in any::<u64>(), dev in "[A-Za-z0-9_.-]{1,16}") {
        let line = format_vital_line(&sample(k, v, ts)).replace("m ", &format!("{dev} "));
        let first = parse_vital_line(&line).unwrap();
        let again = parse_vital_line(&format_vital_line(&first)).unwrap();
        prop_assert_eq!(again, first);
    }
}

#[test]
fn malformed_lines_report_position() {
    use cipmon_core::vitals::VitalsError;
    assert_eq!(parse_vital_line("VITAL m HR abc bpm 1"), Err(VitalsError::ParseError { position: 4 }));
    assert_eq!(
        parse_vital_line("VITAL m SPO2 97 % 1"),
        Err(VitalsError::UnknownVitalType("SPO2".into()))
    );
    assert!(parse_vital_line("VITAL m HR 70 bpm").is_err());
}
