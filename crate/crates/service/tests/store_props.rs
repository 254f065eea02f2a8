use forest_core::gateway::AlertEvent;
use forest_core::lpwan::{encode, Payload, TelemetryMessage};
use forest_core::sensor::{FusionWeights, NodeId, SensorReading};
use forest_service::{JsonlStore, ServiceState, Store};
use proptest::prelude::*;

fn reading(node: u16, seq: u64) -> Vec<u8> {
    encode(&TelemetryMessage {
        seq,
        payload: Payload::Full(SensorReading {
            node: NodeId(node),
            timestamp_ms: seq,
            temperature_c: 25.0,
            humidity_pct: 40.0,
            pressure_hpa: 650.0,
            smoke_raw: 500,
            water_raw: 0,
        }),
    })
}

fn alert(id: u64, node: u16) -> AlertEvent {
    AlertEvent {
        alert_id: id,
        node: NodeId(node),
        label: "A".into(),
        azimuth_deg: 0.0,
        signal: 0.5,
        smoke_cells: vec![],
        t_stimulus_ms: None,
        t_trigger_ms: id,
        t_decided_ms: id,
        t_oriented_ms: id,
        t_verified_ms: id,
        t_dispatched_ms: id,
        attempts: 1,
        delivered: true,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // Ops: (true, node, seq) is telemetry, (false, node, id) an alert.
    #[test]
    fn record_and_alert_ids_strictly_increase(ops in proptest::collection::vec((any::<bool>(), 0u16..3, 0u64..15), 1..40), split in 0usize..40) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        let apply = |state: &mut ServiceState, ops: &[(bool, u16, u64)]| {
            for &(tele, node, n) in ops {
                if tele {
                    state.ingest_telemetry(&reading(node, n)).unwrap();
                } else {
                    state.add_alert(alert(n, node)).unwrap();
                }
            }
        };
        let split = split.min(ops.len());
        {
            let mut s = ServiceState::open(Box::new(JsonlStore::open(&path).unwrap()), FusionWeights::default()).unwrap();
            apply(&mut s, &ops[..split]);
        }
        let mut s = ServiceState::open(Box::new(JsonlStore::open(&path).unwrap()), FusionWeights::default()).unwrap();
        apply(&mut s, &ops[split..]);

        let records = JsonlStore::open(&path).unwrap().load().unwrap();
        let seqs: Vec<u64> = records.iter().map(|r| r.seq()).collect();
        prop_assert!(seqs.windows(2).all(|w| w[0] < w[1]), "{:?}", seqs);
        let ids: Vec<u64> = s.alerts_since(None).iter().map(|a| a.id).collect();
        prop_assert!(ids.windows(2).all(|w| w[0] < w[1]), "{:?}", ids);
    }
}
