mod common;

use std::time::Duration;

use serde_json::json;

use cipmon_core::cip::{decode_cip, BloodGroup, CipCard};
use cipmon_core::device::{Access, ROUTES};
use cipmon_core::rfid::read_full_card;
use common::{card, hr_lines, rig};

fn concrete(path: &str) -> String {
    path.replace("{id}", "1")
}

#[tokio::test]
async fn every_guarded_route_denies_without_session() {
    let r = rig().await;
    r.present(1, &card(42, &r.simopac.http)).await;
    r.vitals(&["VITAL t TEMP 39.9 C 1".to_string()]).await;
    let viewer = r.login("nurse.ana").await;
    let mut guarded = 0;
    for &(method, path, access) in ROUTES {
        let path = concrete(path);
        let body = (method != "GET").then(|| json!({}));
        match access {
            Access::Open => {}
            Access::Session | Access::Editor => {
                guarded += 1;
                for token in [None, Some("not-a-token"), Some("")] {
                    let (status, reply) = r.call(method, &path, token, body.clone()).await;
                    assert_eq!(status, 401, "{method} {path} with {token:?}");
                    assert_eq!(reply, json!({"error": "Unauthorized"}), "{method} {path} leaked data");
                }
                if access == Access::Editor {
                    let (status, reply) = r.call(method, &path, Some(&viewer), body.clone()).await;
                    assert_eq!(status, 403, "{method} {path} as viewer");
                    assert_eq!(reply, json!({"error": "Forbidden"}));
                }
            }
        }
    }
    assert_eq!(guarded, ROUTES.iter().filter(|r| r.2 != Access::Open).count());
    assert!(guarded >= 8);

    let (status, body) = r.call("POST", "/login", None, Some(json!({"user": "dr.pop", "password": "x"}))).await;
    assert_eq!((status, body), (401, json!({"error": "BadCredentials"})));
    let (status, body) = r.call("POST", "/login", None, Some(json!({"user": "ghost", "password": "x"}))).await;
    assert_eq!((status, body), (401, json!({"error": "BadCredentials"})));
    assert_eq!(r.call("GET", "/health", None, None).await.0, 200);
    let (status, page) = r.call("GET", "/ui/", None, None).await;
    assert_eq!(status, 200);
    assert!(page.as_str().unwrap().contains("<html>"));
    // state was untouched by the denied calls
    assert!(!r.device.ctx.state.with(|s| s.alarms()[0].acknowledged));
}

#[tokio::test]
async fn patient_projection() {
    let r = rig().await;
    let token = r.login("nurse.ana").await;
    let (status, body) = r.call("GET", "/patient", Some(&token), None).await;
    assert_eq!((status, body), (409, json!({"error": "NoCurrentPatient"})));
    let c = card(42, &r.simopac.http);
    r.present(7, &c).await;
    let (status, body) = r.call("GET", "/patient", Some(&token), None).await;
    assert_eq!(status, 200);
    let got: CipCard = serde_json::from_value(body).unwrap();
    assert_eq!(got, c);
}

#[tokio::test]
async fn put_cip_writes_verifies_and_commits() {
    let r = rig().await;
    let token = r.login("dr.pop").await;
    let (status, _) = r.call("PUT", "/cip", Some(&token), Some(json!({"blood_group": "A"}))).await;
    assert_eq!(status, 409);

    r.present(7, &card(42, &r.simopac.http)).await;
    let (status, body) = r
        .call("PUT", "/cip", Some(&token), Some(json!({"blood_group": "A", "allergies": ["latex"]})))
        .await;
    assert_eq!(status, 200, "{body}");
    let returned: CipCard = serde_json::from_value(body).unwrap();
    assert_eq!(returned.modifier_id, "dr.pop");
    assert_eq!(returned.blood_group, BloodGroup::A);

    let on_tag = decode_cip(&read_full_card(&r.field, 7).await.unwrap()).unwrap();
    assert_eq!(on_tag, returned);
    assert_eq!(r.device.ctx.state.with(|s| s.current().unwrap().card.clone()), returned);

    let (status, body) = r.call("PUT", "/cip", Some(&token), Some(json!({"serial": 43}))).await;
    assert_eq!((status, body), (422, json!({"error": "ImmutableField"})));
    let (status, _) = r.call("PUT", "/cip", Some(&token), Some(json!({"language": "english"}))).await;
    assert_eq!(status, 422);
    let (status, _) = r.call("PUT", "/cip", Some(&token), Some(json!({"bogus": 1}))).await;
    assert_eq!(status, 400);
}

#[tokio::test]
async fn put_cip_with_tag_gone_changes_nothing() {
    let r = rig().await;
    let token = r.login("admin").await;
    let original = card(42, &r.simopac.http);
    r.present(7, &original).await;
    r.field.remove_tag(7).await.unwrap();
    let (status, body) = r.call("PUT", "/cip", Some(&token), Some(json!({"rh": "Negative"}))).await;
    assert_eq!((status, body), (502, json!({"error": "TagWriteFailed"})));
    assert_eq!(r.device.ctx.state.with(|s| s.current().unwrap().card.clone()), original);
}

#[tokio::test]
async fn alarm_ack_once() {
    let r = rig().await;
    let physician = r.login("dr.pop").await;
    let viewer = r.login("nurse.ana").await;
    r.present(7, &card(42, &r.simopac.http)).await;
    r.vitals(&["VITAL bp SYS 200 mmHg 5".to_string()]).await;
    let (_, alarms) = r.call("GET", "/alarms", Some(&viewer), None).await;
    assert_eq!(alarms.as_array().unwrap().len(), 1);
    assert_eq!(alarms[0]["classification"], "AbnormalHigh");
    let id = alarms[0]["alarm_id"].as_u64().unwrap();

    let path = format!("/alarms/{id}/ack");
    assert_eq!(r.call("POST", &path, Some(&viewer), None).await.0, 403);
    let (status, body) = r.call("POST", &path, Some(&physician), None).await;
    assert_eq!(status, 200);
    assert_eq!(body["acknowledged_by"], "dr.pop");
    let (status, body) = r.call("POST", &path, Some(&physician), None).await;
    assert_eq!((status, body), (409, json!({"error": "AlreadyAcknowledged"})));
    let (status, body) = r.call("POST", "/alarms/999/ack", Some(&physician), None).await;
    assert_eq!((status, body), (404, json!({"error": "UnknownAlarmId"})));
    let (_, alarms) = r.call("GET", "/alarms", Some(&viewer), None).await;
    assert_eq!(alarms[0]["acknowledged"], true);
}

#[tokio::test]
async fn vitals_query() {
    let r = rig().await;
    let token = r.login("nurse.ana").await;
    r.present(7, &card(42, &r.simopac.http)).await;
    let mut lines = hr_lines(5, 70.0, 0);
    lines.push("VITAL t TEMP 36.6 C 5".into());
    r.vitals(&lines).await;
    let (_, hr) = r.call("GET", "/vitals?kind=HR&limit=3", Some(&token), None).await;
    let ts: Vec<u64> = hr.as_array().unwrap().iter().map(|v| v["timestamp"].as_u64().unwrap()).collect();
    assert_eq!(ts, vec![2, 3, 4]);
    let (_, all) = r.call("GET", "/vitals", Some(&token), None).await;
    assert_eq!(all.as_array().unwrap().len(), 6);
    let (status, body) = r.call("GET", "/vitals?kind=SPO2", Some(&token), None).await;
    assert_eq!((status, body), (400, json!({"error": "UnknownVitalType"})));
}

#[tokio::test]
async fn supplementary_over_api() {
    let r = rig().await;
    let token = r.login("nurse.ana").await;
    assert_eq!(r.call("POST", "/supplementary", Some(&token), None).await.0, 409);

    r.present(7, &card(42, &r.simopac.http)).await;
    let (status, body) = r.call("POST", "/supplementary", Some(&token), None).await;
    assert_eq!(status, 200, "{body}");
    assert_eq!(body["serial"], 42);
    assert_eq!(body["labels"]["display_name"], "Nume");

    r.present(8, &card(555, &r.simopac.http)).await;
    let (status, body) = r.call("POST", "/supplementary", Some(&token), None).await;
    assert_eq!((status, body), (404, json!({"error": "UnknownPatient"})));

    let dead = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    r.present(9, &card(42, &format!("http://{dead}"))).await;
    let (status, body) = r.call("POST", "/supplementary", Some(&token), None).await;
    assert_eq!((status, body), (502, json!({"error": "ServerUnreachable"})));

    // every server-side query left an audit entry
    assert_eq!(r.simopac.state.counts().audit, 2);
}

#[tokio::test]
async fn event_stream_carries_alarms() {
    let r = rig().await;
    let token = r.login("nurse.ana").await;
    let url = format!("{}/events?token={token}", r.base);
    let mut stream = r.http.get(&url).send().await.unwrap();
    assert_eq!(stream.status(), 200);
    r.present(7, &card(42, &r.simopac.http)).await;
    r.vitals(&["VITAL t HR 20 bpm 1".to_string(), "VITAL t HR 21 bpm 2".to_string()]).await;
    let mut text = String::new();
    let deadline = tokio::time::Instant::now() + Duration::from_secs(5);
    while text.matches("\"event\":\"alarm\"").count() < 2 {
        let chunk = tokio::time::timeout_at(deadline, stream.chunk()).await.unwrap().unwrap().unwrap();
        text.push_str(&String::from_utf8_lossy(&chunk));
    }
    assert!(text.contains("\"event\":\"patient_identified\""));
    let ids: Vec<u64> = text
        .lines()
        .filter_map(|l| l.strip_prefix("data: "))
        .filter_map(|d| serde_json::from_str::<serde_json::Value>(d).ok())
        .filter(|v| v["event"] == "alarm")
        .map(|v| v["alarm_id"].as_u64().unwrap())
        .collect();
    assert_eq!(ids, vec![1, 2]);

    let (status, _) = r.call("GET", "/events?token=wrong", None, None).await;
    assert_eq!(status, 401);
}

#[tokio::test]
async fn diag_reports_counters() {
    let r = rig().await;
    let token = r.login("nurse.ana").await;
    r.device.submit_vital_line("VITAL broken");
    r.vitals(&hr_lines(3, 70.0, 0)).await;
    let (status, body) = r.call("GET", "/diag", Some(&token), None).await;
    assert_eq!(status, 200);
    assert_eq!(body["counters"]["sample_parse_errors"], 1);
    assert_eq!(body["counters"]["samples_dropped"], 3);
    assert_eq!(body["in_flight"], 0);
}
