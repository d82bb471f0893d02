mod common;

use std::sync::Arc;

use proptest::prelude::*;
use proptest::strategy::ValueTree;

use cipmon_core::cip::encode_cip;
use cipmon_core::clock::{Clock, ManualClock};
use cipmon_core::rfid::frame::decode_all;
use cipmon_core::rfid::{
    frame_decode, frame_encode, read_full_card, serve_tagsim, write_full_card, FieldEventKind, FieldHandle,
    LinkError, ReaderClient, TagReader,
};
use common::gen::{card, frame};
use common::DepartingReader;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn frame_roundtrip(f in frame()) {
        let mut bytes = frame_encode(f.command, &f.payload).unwrap();
        prop_assert_eq!(bytes.len(), f.payload.len() + 6);
        prop_assert_eq!(frame_decode(&mut bytes).unwrap(), f);
        prop_assert!(bytes.is_empty());
    }

    #[test]
    fn resync_through_garbage(
        frames in prop::collection::vec(frame(), 1..6),
        garbage in prop::collection::vec(any::<u8>(), 0..=64),
        cuts in prop::collection::vec(any::<prop::sample::Index>(), 0..6),
    ) {
        // spread the garbage over the gaps before, between and after the frames
        let mut pieces: Vec<Vec<u8>> = vec![Vec::new(); frames.len() + 1];
        let mut points: Vec<usize> = cuts.iter().map(|i| i.index(garbage.len() + 1)).collect();
        points.sort_unstable();
        let mut start = 0;
        for (gap, end) in points.into_iter().chain([garbage.len()]).enumerate() {
            let gap = gap % pieces.len();
            pieces[gap].extend_from_slice(&garbage[start..end.max(start)]);
            start = end.max(start);
        }
        let mut stream = Vec::new();
        for (i, f) in frames.iter().enumerate() {
            stream.extend_from_slice(&pieces[i]);
            stream.extend(frame_encode(f.command, &f.payload).unwrap());
        }
        stream.extend_from_slice(&pieces[frames.len()]);
        prop_assert_eq!(decode_all(stream), frames);
    }
}

#[test]
fn oversized_payload_refused() {
    assert!(frame_encode(1, &[0; 256]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn full_card_roundtrip(cards in prop::collection::vec(card(), 1..4)) {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async {
            let field = FieldHandle::spawn(Arc::new(ManualClock::new(0)));
            for (uid, c) in cards.iter().enumerate() {
                let uid = uid as u64 + 1;
                let image = encode_cip(c).unwrap();
                field.add_tag(uid, None).await.unwrap();
                write_full_card(&field, uid, &image).await.unwrap();
                assert_eq!(read_full_card(&field, uid).await.unwrap(), image);
            }
        });
    }
}

#[tokio::test]
async fn full_card_roundtrip_over_tcp() {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let field = FieldHandle::spawn(Arc::new(ManualClock::new(0)));
    tokio::spawn(serve_tagsim(listener, field));
    let client = ReaderClient::new(addr);
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    for uid in 1..=20u64 {
        let c = card().new_tree(&mut runner).unwrap().current();
        let image = encode_cip(&c).unwrap();
        client.add_tag(uid, Some(&image)).await.unwrap();
        assert_eq!(read_full_card(&client, uid).await.unwrap(), image);
        let mut rewritten = c.clone();
        rewritten.modifier_id = "dr.pop".into();
        let image = encode_cip(&rewritten).unwrap();
        write_full_card(&client, uid, &image).await.unwrap();
        assert_eq!(read_full_card(&client, uid).await.unwrap(), image);
    }
    assert_eq!(client.inventory().await.unwrap(), (1..=20).collect::<Vec<_>>());
}

#[tokio::test]
async fn departure_mid_read_leaves_no_partial_state() {
    use cipmon_core::agents::{
        event_channel, standard_agents, DeviceContext, Diagnostics, SharedState, StepRuntime, Stimulus,
    };
    let clock: Arc<dyn Clock> = Arc::new(ManualClock::new(0));
    let field = FieldHandle::spawn(clock.clone());
    let mut c = common::card(42, "http://s/");
    c.allergies = (0..6).map(|i| format!("allergen-{i}")).collect();
    let image = encode_cip(&c).unwrap();
    assert!(image.len() > 3 * 16);
    field.add_tag(3, Some(&image)).await.unwrap();
    let reader = Arc::new(DepartingReader::new(field.clone(), 3, 2));
    assert_eq!(read_full_card(reader.as_ref(), 3).await, Err(LinkError::TagNotInField));

    field.add_tag(3, Some(&image)).await.unwrap();
    reader.reset();
    let ctx = Arc::new(DeviceContext {
        state: SharedState::new(),
        reader,
        records: Arc::new(cipmon_core::agents::SupplementaryClient::new("u", "p")),
        hl7_endpoint: "127.0.0.1:1".into(),
        retry: common::fast_retry(),
        thresholds: Default::default(),
        window_size: 10,
        clock: clock.clone(),
        events: event_channel(),
        diag: Arc::new(Diagnostics::default()),
        control_ids: cipmon_core::hl7::ControlIds::starting_at(1),
    });
    let mut rt = StepRuntime::new(standard_agents(&ctx), clock).unwrap();
    rt.inject(Stimulus::TagArrived { uid: 3 });
    rt.run_until_idle().await;
    assert_eq!(ctx.state.with(|s| s.current_serial()), None);
    assert!(rt.bus().trace().is_empty());
    assert_eq!(ctx.diag.snapshot().identification_failures, 1);
}

#[tokio::test]
async fn inventory_tracks_membership_and_events_are_ordered() {
    let clock = Arc::new(ManualClock::new(100));
    let field = FieldHandle::spawn(clock.clone());
    for uid in [9u64, 3, 7] {
        field.add_tag(uid, None).await.unwrap();
        clock.advance(1);
    }
    assert_eq!(field.inventory().await.unwrap(), vec![3, 7, 9]);
    field.remove_tag(7).await.unwrap();
    assert_eq!(field.inventory().await.unwrap(), vec![3, 9]);
    assert_eq!(field.add_tag(3, None).await, Err(LinkError::DuplicateUid));
    assert_eq!(field.remove_tag(7).await, Err(LinkError::TagNotInField));
    let events = field.events().await.unwrap();
    let kinds: Vec<_> = events.iter().map(|e| (e.uid, e.kind)).collect();
    assert_eq!(
        kinds,
        vec![
            (9, FieldEventKind::Enter),
            (3, FieldEventKind::Enter),
            (7, FieldEventKind::Enter),
            (7, FieldEventKind::Leave),
        ]
    );
    assert!(events.windows(2).all(|w| w[0].seq < w[1].seq && w[0].at <= w[1].at));
}
