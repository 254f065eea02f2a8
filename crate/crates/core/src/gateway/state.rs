use serde::Serialize;

use crate::lpwan::{decode, Payload, WireError};
use crate::sensor::{compute_signal, DomainError, FusionWeights, NodeId, SectorSignal, SensorReading};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeState {
    pub node: NodeId,
    pub last_seq: Option<u64>,
    pub last_reading: Option<SensorReading>,
    pub last_heard_ms: Option<u64>,
    pub raining: bool,
    pub signal: Option<SectorSignal>,
}

impl NodeState {
    pub fn new(node: NodeId) -> Self {
        Self {
            node,
            last_seq: None,
            last_reading: None,
            last_heard_ms: None,
            raining: false,
            signal: None,
        }
    }

    pub fn is_stale(&self, now_ms: u64, stale_after_ms: u64) -> bool {
        match self.last_heard_ms {
            Some(t) => now_ms.saturating_sub(t) > stale_after_ms,
            None => true,
        }
    }

    /// A node the decision step may pick: has a reading, is dry and fresh.
    pub fn is_eligible(&self, now_ms: u64, stale_after_ms: u64) -> bool {
        self.signal.is_some() && !self.raining && !self.is_stale(now_ms, stale_after_ms)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum IngestOutcome {
    Accepted { node: NodeId, seq: u64, rain: bool },
    Duplicate { node: NodeId, seq: u64 },
    /// An older sequence number than one already applied.
    OutOfOrder { node: NodeId, seq: u64 },
    UnknownNode(NodeId),
    Malformed(WireError),
    Invalid(DomainError),
}

impl IngestOutcome {
    pub fn is_accepted(&self) -> bool {
        matches!(self, IngestOutcome::Accepted { .. })
    }
}

/// The gateway's latest view of every node it manages.
#[derive(Debug, Clone)]
pub struct GatewayState {
    nodes: Vec<NodeState>,
    weights: FusionWeights,
    pub rejected: u64,
    pub duplicates: u64,
}

impl GatewayState {
    pub fn new(node_ids: impl IntoIterator<Item = NodeId>, weights: FusionWeights) -> Self {
        let mut nodes: Vec<NodeState> = node_ids.into_iter().map(NodeState::new).collect();
        nodes.sort_by_key(|n| n.node);
        nodes.dedup_by_key(|n| n.node);
        Self {
            nodes,
            weights,
            rejected: 0,
            duplicates: 0,
        }
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    pub fn weights(&self) -> &FusionWeights {
        &self.weights
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeState> {
        self.nodes.iter().find(|n| n.node == id)
    }

    fn node_mut(&mut self, id: NodeId) -> Option<&mut NodeState> {
        self.nodes.iter_mut().find(|n| n.node == id)
    }

    /// Decode and apply one received frame.
    pub fn ingest(&mut self, bytes: &[u8], now_ms: u64) -> IngestOutcome {
        let msg = match decode(bytes) {
            Ok(m) => m,
            Err(e) => {
                self.rejected += 1;
                return IngestOutcome::Malformed(e);
            }
        };
        let node = msg.node_id();
        let seq = msg.seq;
        let weights = self.weights.clone();
        let signal = match &msg.payload {
            Payload::Full(r) => match compute_signal(r, &weights) {
                Ok(s) => Some(s),
                Err(e) => {
                    self.rejected += 1;
                    return IngestOutcome::Invalid(e);
                }
            },
            Payload::RainHeartbeat { .. } => None,
        };
        let Some(state) = self.node_mut(node) else {
            self.rejected += 1;
            return IngestOutcome::UnknownNode(node);
        };
        match state.last_seq {
            Some(last) if seq == last => {
                self.duplicates += 1;
                return IngestOutcome::Duplicate { node, seq };
            }
            Some(last) if seq < last => {
                self.duplicates += 1;
                return IngestOutcome::OutOfOrder { node, seq };
            }
            _ => {}
        }
        state.last_seq = Some(seq);
        state.last_heard_ms = Some(now_ms);
        match msg.payload {
            Payload::Full(r) => {
                state.raining = false;
                state.last_reading = Some(r);
                state.signal = signal;
                IngestOutcome::Accepted {
                    node,
                    seq,
                    rain: false,
                }
            }
            Payload::RainHeartbeat { .. } => {
                state.raining = true;
                IngestOutcome::Accepted {
                    node,
                    seq,
                    rain: true,
                }
            }
        }
    }

    pub fn eligible(&self, now_ms: u64, stale_after_ms: u64) -> Vec<&NodeState> {
        self.nodes
            .iter()
            .filter(|n| n.is_eligible(now_ms, stale_after_ms))
            .collect()
    }
}
