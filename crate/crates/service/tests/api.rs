use std::io::{BufRead, BufReader};

use forest_core::gateway::AlertEvent;
use forest_core::lpwan::{encode, Payload, TelemetryMessage};
use forest_core::sensor::{NodeId, SensorReading};
use forest_core::sim::ScenarioEvent;
use forest_service::{spawn, NodeView, ServiceConfig, StoredAlert};
use serde_json::Value;

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .build()
        .into()
}

fn config(store: Option<std::path::PathBuf>) -> ServiceConfig {
    ServiceConfig {
        bind: "127.0.0.1:0".into(),
        store_path: store,
        ..ServiceConfig::default()
    }
}

fn frame(node: u16, seq: u64, smoke: u16) -> Vec<u8> {
    encode(&TelemetryMessage {
        seq,
        payload: Payload::Full(SensorReading {
            node: NodeId(node),
            timestamp_ms: seq * 1000,
            temperature_c: 40.0,
            humidity_pct: 20.0,
            pressure_hpa: 650.0,
            smoke_raw: smoke,
            water_raw: 0,
        }),
    })
}

fn alert(id: u64, node: u16) -> AlertEvent {
    AlertEvent {
        alert_id: id,
        node: NodeId(node),
        label: "A".into(),
        azimuth_deg: 72.0,
        signal: 0.9,
        smoke_cells: vec![(1, 4)],
        t_stimulus_ms: Some(0),
        t_trigger_ms: 3500 + id,
        t_decided_ms: 4320 + id,
        t_oriented_ms: 16_320 + id,
        t_verified_ms: 118_320 + id,
        t_dispatched_ms: 118_320 + id,
        attempts: 1,
        delivered: true,
    }
}

fn post(url: &str, body: &[u8]) -> (u16, Value) {
    let mut resp = agent().post(url).send(body).unwrap();
    let status = resp.status().as_u16();
    let v = resp.body_mut().read_json::<Value>().unwrap_or(Value::Null);
    (status, v)
}

fn get<T: serde::de::DeserializeOwned>(url: &str) -> T {
    agent().get(url).call().unwrap().body_mut().read_json().unwrap()
}

#[test]
fn telemetry_accept_duplicate_and_reject() {
    let svc = spawn(&config(None), None).unwrap();
    let url = format!("{}/telemetry", svc.url());
    let (s, v) = post(&url, &frame(0, 1, 4095));
    assert_eq!(s, 200);
    assert_eq!(v["status"], "accepted");
    let (_, v) = post(&url, &frame(0, 1, 4095));
    assert_eq!(v["status"], "duplicate");

    let bad = String::from_utf8(frame(0, 2, 10)).unwrap().replace("\"temp_c\":40.00", "\"temp_c\":400.00");
    let (s, v) = post(&url, bad.as_bytes());
    assert_eq!(s, 400);
    assert_eq!(v["field"], "temp_c", "{v}");
    let (s, v) = post(&url, b"{\"seq\":1}");
    assert_eq!(s, 400);
    assert!(v["field"].is_string(), "{v}");

    let nodes: Vec<NodeView> = get(&format!("{}/nodes", svc.url()));
    assert_eq!(nodes.len(), 1);
    assert_eq!(nodes[0].last_seq, 1);
    assert!((nodes[0].signal.unwrap() - 0.95).abs() < 1e-12);
}

#[test]
fn alerts_since_id() {
    let svc = spawn(&config(None), None).unwrap();
    let url = format!("{}/alerts", svc.url());
    for i in 0..3 {
        let (s, _) = post(&url, serde_json::to_string(&alert(i, 0)).unwrap().as_bytes());
        assert_eq!(s, 201);
    }
    // A resend is idempotent.
    post(&url, serde_json::to_string(&alert(1, 0)).unwrap().as_bytes());
    let all: Vec<StoredAlert> = get(&url);
    assert_eq!(all.iter().map(|a| a.id).collect::<Vec<_>>(), vec![1, 2, 3]);
    let later: Vec<StoredAlert> = get(&format!("{url}?since_id=2"));
    assert_eq!(later.len(), 1);
    assert_eq!(later[0].alert, alert(2, 0));
    let (s, _) = post(&url, b"{\"node\": 0}");
    assert_eq!(s, 400);
}

#[test]
fn restart_replays_the_store() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("store.jsonl");
    {
        let svc = spawn(&config(Some(path.clone())), None).unwrap();
        post(&format!("{}/telemetry", svc.url()), &frame(2, 5, 100));
        post(&format!("{}/alerts", svc.url()), serde_json::to_string(&alert(0, 2)).unwrap().as_bytes());
        svc.stop();
    }
    let svc = spawn(&config(Some(path)), None).unwrap();
    let alerts: Vec<StoredAlert> = get(&format!("{}/alerts", svc.url()));
    assert_eq!(alerts.len(), 1);
    let nodes: Vec<NodeView> = get(&format!("{}/nodes", svc.url()));
    assert_eq!(nodes[0].node, NodeId(2));
    assert_eq!(nodes[0].last_seq, 5);
    // Sequence numbers continue after a restart.
    let (_, v) = post(&format!("{}/telemetry", svc.url()), &frame(2, 5, 100));
    assert_eq!(v["status"], "duplicate");
    let (s, v) = post(&format!("{}/alerts", svc.url()), serde_json::to_string(&alert(9, 2)).unwrap().as_bytes());
    assert_eq!(s, 201);
    assert_eq!(v["id"], 2);
}

#[test]
fn stream_preserves_store_order() {
    let svc = spawn(&config(None), None).unwrap();
    let resp = agent().get(&format!("{}/stream", svc.url())).call().unwrap();
    let mut lines = BufReader::new(resp.into_body().into_reader()).lines();
    let base = svc.url();
    let producer = std::thread::spawn(move || {
        for i in 0..10u64 {
            post(&format!("{base}/telemetry"), &frame(0, i, 100));
            if i % 3 == 0 {
                post(&format!("{base}/alerts"), serde_json::to_string(&alert(i, 0)).unwrap().as_bytes());
            }
        }
    });
    let mut ids = Vec::new();
    let mut kinds = Vec::new();
    while kinds.len() < 14 {
        let line = lines.next().unwrap().unwrap();
        if let Some(id) = line.strip_prefix("id: ") {
            ids.push(id.parse::<u64>().unwrap());
        } else if let Some(k) = line.strip_prefix("event: ") {
            kinds.push(k.to_string());
        }
    }
    producer.join().unwrap();
    assert_eq!(ids, (0..14).collect::<Vec<_>>());
    assert_eq!(kinds[0], "telemetry");
    assert_eq!(kinds[1], "alert");
    assert_eq!(kinds.iter().filter(|k| *k == "alert").count(), 4);
}

#[test]
fn control_events_reach_the_gateway() {
    let svc = spawn(&config(None), None).unwrap();
    let ev = ScenarioEvent::RainStart { node: NodeId(1) };
    let body = serde_json::to_vec(&ev).unwrap();
    let url = format!("{}/control/event", svc.url());
    let (s, _) = post(&url, &body);
    assert_eq!(s, 503);

    let (tx, rx) = std::sync::mpsc::channel();
    let svc = spawn(&config(None), Some(tx)).unwrap();
    let url = format!("{}/control/event", svc.url());
    let (s, _) = post(&url, &body);
    assert_eq!(s, 202);
    assert_eq!(rx.recv().unwrap(), ev);
    let (s, _) = post(&url, b"{\"kind\":\"nope\"}");
    assert_eq!(s, 400);
}

#[test]
fn port_from_environment() {
    std::env::set_var("PORT", "18099");
    let c = ServiceConfig::default().with_env();
    std::env::remove_var("PORT");
    assert_eq!(c.bind, "127.0.0.1:18099");
    let c = ServiceConfig::from_toml_str("bind = \"0.0.0.0:9000\"\n").unwrap();
    assert_eq!(c.bind, "0.0.0.0:9000");
    assert!(ServiceConfig::from_toml_str("bogus = 1\n").is_err());
}
