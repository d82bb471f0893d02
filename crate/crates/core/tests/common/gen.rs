use proptest::prelude::*;

use cipmon_core::cip::{BloodGroup, CipCard, Rh, MAX_IMAGE_LEN};
use cipmon_core::hl7::Hl7Message;
use cipmon_core::rfid::Frame;

/// Encoded size from the layout: fixed 30 bytes plus each variable part.
pub fn layout_len(c: &CipCard) -> usize {
    let list = |l: &[String]| l.iter().map(|e| 1 + e.len()).sum::<usize>();
    30 + c.server_uri.len() + list(&c.allergies) + list(&c.conditions) + c.modifier_id.len()
}

fn entry() -> impl Strategy<Value = String> {
    "[a-z0-9ăîșț ,.-]{1,12}".prop_filter("entry fits", |s| s.len() <= 32)
}

pub fn blood() -> impl Strategy<Value = BloodGroup> {
    prop_oneof![
        Just(BloodGroup::O),
        Just(BloodGroup::A),
        Just(BloodGroup::B),
        Just(BloodGroup::AB),
        Just(BloodGroup::Unknown)
    ]
}

pub fn rh() -> impl Strategy<Value = Rh> {
    prop_oneof![Just(Rh::Negative), Just(Rh::Positive), Just(Rh::Unknown)]
}

/// Valid cards that fit the tag budget.
pub fn card() -> impl Strategy<Value = CipCard> {
    (
        (1u64..=u64::MAX, blood(), rh(), any::<[bool; 3]>(), "[a-z]{2}"),
        "[ -~]{1,128}",
        prop::collection::vec(entry(), 0..=16),
        prop::collection::vec(entry(), 0..=16),
        any::<u64>(),
        "[ -~]{0,32}",
    )
        .prop_map(|((serial, blood_group, rh, flags, language), server_uri, allergies, conditions, last_modified, modifier_id)| CipCard {
            serial,
            version: 1,
            blood_group,
            rh,
            hiv_positive: flags[0],
            transmittable_disease: flags[1],
            chronic_disease: flags[2],
            language,
            server_uri,
            allergies,
            conditions,
            last_modified,
            modifier_id,
        })
        .prop_filter("fits the tag", |c| layout_len(c) <= MAX_IMAGE_LEN)
}

pub fn frame() -> impl Strategy<Value = Frame> {
    (any::<u8>(), prop::collection::vec(any::<u8>(), 0..=255))
        .prop_map(|(command, payload)| Frame { command, payload })
}

fn text_field() -> impl Strategy<Value = String> {
    "[A-Za-z0-9 .:/_-]{0,12}"
}

/// Messages with a well-formed MSH and delimiter-free fields.
pub fn message() -> impl Strategy<Value = Hl7Message> {
    let msh = (prop::collection::vec(text_field(), 7..12), "[A-Z0-9]{1,10}").prop_map(|(mut rest, ctrl)| {
        // MSH-3..MSH-9, then MSH-10 and anything after it
        let tail = rest.split_off(7);
        let mut seg = vec!["MSH".to_string(), "^~\\&".to_string()];
        seg.extend(rest);
        seg.push(ctrl);
        seg.extend(tail);
        seg
    });
    let other = ("[A-Z][A-Z0-9]{2}", prop::collection::vec(text_field(), 0..8)).prop_map(|(id, fields)| {
        let mut seg = vec![id];
        seg.extend(fields);
        seg
    });
    (msh, prop::collection::vec(other, 0..6)).prop_map(|(msh, rest)| {
        let mut segments = vec![msh];
        segments.extend(rest);
        Hl7Message { segments }
    })
}
