mod common;

use std::collections::BTreeSet;
use std::sync::Arc;

use proptest::prelude::*;

use cipmon_core::cip::CipCard;
use cipmon_core::hl7::{
    build_oru, encode_hl7, field, format_value, mllp_unwrap, mllp_wrap, parse_hl7, parse_oru,
    take_mllp_frame, ControlIds,
};
use cipmon_core::vitals::{BiometricResult, VitalKind};
use common::gen::message;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn encode_parse_inverse(msg in message()) {
        let text = encode_hl7(&msg);
        let back = parse_hl7(&text).unwrap();
        prop_assert_eq!(encode_hl7(&back), text);
        prop_assert_eq!(back, msg);
    }

    #[test]
    fn wrap_unwrap_inverse(text in "[^\\x0B\\x1C]{0,300}") {
        let framed = mllp_wrap(&text);
        prop_assert_eq!(framed[0], 0x0B);
        prop_assert_eq!(&framed[framed.len() - 2..], &[0x1C, 0x0D]);
        prop_assert_eq!(mllp_unwrap(&framed).unwrap(), text);
    }

    #[test]
    fn frames_survive_arbitrary_chunking(texts in prop::collection::vec("[a-zA-Z0-9|^\r]{1,80}", 1..5), split in 1usize..16) {
        let stream: Vec<u8> = texts.iter().flat_map(|t| mllp_wrap(t)).collect();
        let mut buf = Vec::new();
        let mut got = Vec::new();
        for chunk in stream.chunks(split) {
            buf.extend_from_slice(chunk);
            while let Some(t) = take_mllp_frame(&mut buf).unwrap() {
                got.push(t);
            }
        }
        prop_assert!(buf.is_empty());
        prop_assert_eq!(got, texts);
    }

    #[test]
    fn obx_values_within_half_a_hundredth(
        a in -1.0e6f64..1.0e6,
        b in -1.0e6f64..1.0e6,
        t in 0.0f64..=1.0,
        kind in prop_oneof![Just(VitalKind::HR), Just(VitalKind::TEMP), Just(VitalKind::SYS), Just(VitalKind::DIA)],
        serial in 1u64..=u64::MAX,
    ) {
        let (min, max) = if a <= b { (a, b) } else { (b, a) };
        let mean = min + (max - min) * t;
        let card = CipCard::blank(serial, "en", "http://s/");
        let result = BiometricResult { serial, kind, window_start: 1_700_000_000, window_end: 1_700_000_009, count: 10, min, max, mean };
        let msg = build_oru(&card, &result, "77", 1_700_000_010).unwrap();
        let obx: Vec<_> = msg.segments_named("OBX").collect();
        prop_assert_eq!(obx.len(), 3);
        for seg in &obx {
            let v = field(seg, 5);
            let decimals = v.split('.').nth(1).map_or(0, str::len);
            prop_assert!(decimals <= 2, "{v}");
        }
        let content = parse_oru(&parse_hl7(&encode_hl7(&msg)).unwrap()).unwrap();
        prop_assert_eq!(content.serial, serial);
        let o = &content.observations[0];
        prop_assert!((o.min - min).abs() <= 0.005 + 1e-9);
        prop_assert!((o.max - max).abs() <= 0.005 + 1e-9);
        prop_assert!((o.mean - mean).abs() <= 0.005 + 1e-9);
    }
}

#[test]
fn oru_carries_serial_and_three_obx() {
    let card = CipCard::blank(42, "ro", "http://s/");
    let result = BiometricResult {
        serial: 42,
        kind: VitalKind::HR,
        window_start: 0,
        window_end: 9,
        count: 10,
        min: 60.0,
        max: 88.5,
        mean: 71.25,
    };
    let msg = build_oru(&card, &result, "1001", 0).unwrap();
    let text = encode_hl7(&msg);
    assert!(text.starts_with("MSH|^~\\&|CIPDEV|DEVICE|SIMOPAC|SIMOPAC|19700101000000||ORU^R01|1001|P|2.5\r"));
    assert!(text.contains("\rPID|1||42\r"));
    assert_eq!(text.matches("\rOBX|").count(), 3);
    assert!(text.contains("OBX|2|NM|HR^MAX||88.5|bpm|||||F\r"));
    assert!(text.contains("OBX|3|NM|HR^MEAN||71.25|bpm|||||F\r"));
    assert_eq!(format_value(-0.001), "0");

    let other = CipCard::blank(43, "ro", "http://s/");
    assert!(build_oru(&other, &result, "1", 0).is_err());
}

#[test]
fn control_ids_unique_and_increasing() {
    let ids = Arc::new(ControlIds::starting_at(1));
    let handles: Vec<_> = (0..4)
        .map(|_| {
            let ids = ids.clone();
            std::thread::spawn(move || (0..1000).map(|_| ids.next().parse::<u64>().unwrap()).collect::<Vec<_>>())
        })
        .collect();
    let mut all = BTreeSet::new();
    for h in handles {
        let seq = h.join().unwrap();
        assert!(seq.windows(2).all(|w| w[0] < w[1]));
        all.extend(seq);
    }
    assert_eq!(all.len(), 4000);
}
