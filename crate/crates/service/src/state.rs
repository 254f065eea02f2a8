use std::collections::BTreeMap;
use std::time::{SystemTime, UNIX_EPOCH};

use forest_core::gateway::AlertEvent;
use forest_core::lpwan::{decode, encode, Payload, WireError};
use forest_core::sensor::{compute_signal, DomainError, FusionWeights, NodeId, SensorReading};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::broadcast;

use crate::store::{Store, StoreError, StoredRecord};

/// Latest known state of one node, as served by `GET /nodes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeView {
    pub node: NodeId,
    pub last_seq: u64,
    pub last_timestamp_ms: u64,
    pub received_ms: u64,
    pub raining: bool,
    pub reading: Option<SensorReading>,
    pub signal: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredAlert {
    pub id: u64,
    pub received_ms: u64,
    #[serde(flatten)]
    pub alert: AlertEvent,
}

/// One item on the live stream, in store order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamItem {
    pub seq: u64,
    pub kind: String,
    pub data: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TelemetryAck {
    pub status: &'static str,
    pub node: NodeId,
    pub seq: u64,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl IngestError {
    pub fn field(&self) -> Option<String> {
        match self {
            IngestError::Wire(e) => e.field().map(str::to_string),
            IngestError::Domain(e) => e.field().map(str::to_string),
            IngestError::Store(_) => None,
        }
    }
}

pub fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

/// Store plus the indexes derived from it. Mutations persist, update the
/// index and broadcast in one step, so the stream order is the store order.
pub struct ServiceState {
    store: Box<dyn Store>,
    weights: FusionWeights,
    next_seq: u64,
    alerts: Vec<StoredAlert>,
    nodes: BTreeMap<NodeId, NodeView>,
    stream: broadcast::Sender<StreamItem>,
}

impl ServiceState {
    pub fn open(mut store: Box<dyn Store>, weights: FusionWeights) -> Result<Self, StoreError> {
        let records = store.load()?;
        let (stream, _) = broadcast::channel(1024);
        let mut state = Self {
            store,
            weights,
            next_seq: 0,
            alerts: Vec::new(),
            nodes: BTreeMap::new(),
            stream,
        };
        for r in records {
            state.next_seq = state.next_seq.max(r.seq() + 1);
            state.index(&r);
        }
        Ok(state)
    }

    pub fn subscribe(&self) -> broadcast::Receiver<StreamItem> {
        self.stream.subscribe()
    }

    pub fn alerts_since(&self, since_id: Option<u64>) -> Vec<StoredAlert> {
        self.alerts
            .iter()
            .filter(|a| since_id.is_none_or(|s| a.id > s))
            .cloned()
            .collect()
    }

    pub fn nodes(&self) -> Vec<NodeView> {
        self.nodes.values().cloned().collect()
    }

    fn index(&mut self, record: &StoredRecord) -> Option<StreamItem> {
        match record {
            StoredRecord::Telemetry {
                seq,
                received_ms,
                wire,
            } => {
                let msg = decode(wire.as_bytes()).ok()?;
                let node = msg.node_id();
                let view = self.nodes.entry(node).or_insert(NodeView {
                    node,
                    last_seq: msg.seq,
                    last_timestamp_ms: 0,
                    received_ms: 0,
                    raining: false,
                    reading: None,
                    signal: None,
                });
                view.last_seq = msg.seq;
                view.last_timestamp_ms = msg.timestamp_ms();
                view.received_ms = *received_ms;
                match &msg.payload {
                    Payload::Full(r) => {
                        view.raining = false;
                        view.signal = compute_signal(r, &self.weights).ok().map(|s| s.signal);
                        view.reading = Some(r.clone());
                    }
                    Payload::RainHeartbeat { .. } => view.raining = true,
                }
                let data = serde_json::json!({
                    "node": view.clone(),
                    "wire": serde_json::from_str::<serde_json::Value>(wire).ok(),
                });
                Some(StreamItem {
                    seq: *seq,
                    kind: "telemetry".into(),
                    data,
                })
            }
            StoredRecord::Alert {
                seq,
                received_ms,
                id,
                alert,
            } => {
                let stored = StoredAlert {
                    id: *id,
                    received_ms: *received_ms,
                    alert: alert.clone(),
                };
                self.alerts.push(stored.clone());
                Some(StreamItem {
                    seq: *seq,
                    kind: "alert".into(),
                    data: serde_json::to_value(stored).expect("alert serializes"),
                })
            }
        }
    }

    fn commit(&mut self, record: StoredRecord) -> Result<(), StoreError> {
        self.store.append(&record)?;
        self.next_seq += 1;
        if let Some(item) = self.index(&record) {
            // No subscribers is fine.
            let _ = self.stream.send(item);
        }
        Ok(())
    }

    /// Validate and apply one wire frame. Replays of an applied sequence
    /// number are acknowledged but not stored again.
    pub fn ingest_telemetry(&mut self, bytes: &[u8]) -> Result<TelemetryAck, IngestError> {
        let msg = decode(bytes)?;
        if let Payload::Full(r) = &msg.payload {
            r.validate()?;
        }
        let node = msg.node_id();
        if self.nodes.get(&node).is_some_and(|v| msg.seq <= v.last_seq) {
            return Ok(TelemetryAck {
                status: "duplicate",
                node,
                seq: msg.seq,
            });
        }
        let wire = String::from_utf8(encode(&msg)).expect("wire form is UTF-8");
        self.commit(StoredRecord::Telemetry {
            seq: self.next_seq,
            received_ms: unix_ms(),
            wire,
        })?;
        Ok(TelemetryAck {
            status: "accepted",
            node,
            seq: msg.seq,
        })
    }

    /// Store an alert; a resend of the same gateway alert returns the stored copy.
    pub fn add_alert(&mut self, alert: AlertEvent) -> Result<StoredAlert, StoreError> {
        if let Some(existing) = self.alerts.iter().find(|a| {
            a.alert.alert_id == alert.alert_id
                && a.alert.node == alert.node
                && a.alert.t_trigger_ms == alert.t_trigger_ms
        }) {
            return Ok(existing.clone());
        }
        let id = self.alerts.last().map_or(1, |a| a.id + 1);
        self.commit(StoredRecord::Alert {
            seq: self.next_seq,
            received_ms: unix_ms(),
            id,
            alert,
        })?;
        Ok(self.alerts.last().expect("just stored").clone())
    }
}
