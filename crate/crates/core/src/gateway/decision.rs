use serde::{Deserialize, Serialize};

use crate::dqn::{argmax, state_vector, DqnError, QNetwork};
use crate::sensor::{rank_sectors, NodeId, SensorReading};

use super::state::GatewayState;

/// What picks the sector to look at.
#[derive(Debug, Clone)]
pub enum DecisionAgent {
    /// Highest fused signal wins.
    Fallback,
    /// Trained Q-network over the readings of every node, in id order.
    Dqn(QNetwork),
}

impl DecisionAgent {
    /// Check that a network matches the number of managed nodes.
    pub fn checked(self, node_count: usize) -> Result<Self, DqnError> {
        if let DecisionAgent::Dqn(net) = &self {
            let want = node_count * crate::dqn::FEATURES_PER_NODE;
            if net.input_dim() != want {
                return Err(DqnError::DimensionMismatch {
                    expected: want,
                    got: net.input_dim(),
                });
            }
            if net.action_count() != node_count {
                return Err(DqnError::DimensionMismatch {
                    expected: node_count,
                    got: net.action_count(),
                });
            }
        }
        Ok(self)
    }

    pub fn name(&self) -> &'static str {
        match self {
            DecisionAgent::Fallback => "fallback",
            DecisionAgent::Dqn(_) => "dqn",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub node: NodeId,
    pub signal: f64,
}

/// Placeholder for nodes with no reading yet; masked out of the argmax anyway.
fn quiet_reading(node: NodeId) -> SensorReading {
    SensorReading {
        node,
        timestamp_ms: 0,
        temperature_c: 18.0,
        humidity_pct: 55.0,
        pressure_hpa: 650.0,
        smoke_raw: 0,
        water_raw: 0,
    }
}

/// Pick a sector among the eligible nodes, or `None` if there are none.
pub fn decide(
    state: &GatewayState,
    agent: &DecisionAgent,
    now_ms: u64,
    stale_after_ms: u64,
) -> Result<Option<Decision>, DqnError> {
    let nodes = state.nodes();
    let eligible: Vec<bool> = nodes
        .iter()
        .map(|n| n.is_eligible(now_ms, stale_after_ms))
        .collect();
    if !eligible.iter().any(|e| *e) {
        return Ok(None);
    }
    let chosen = match agent {
        DecisionAgent::Fallback => {
            let signals: Vec<_> = nodes
                .iter()
                .zip(&eligible)
                .filter(|(_, e)| **e)
                .filter_map(|(n, _)| n.signal.clone())
                .collect();
            let id = rank_sectors(&signals).expect("eligible nodes carry a signal");
            nodes.iter().position(|n| n.node == id).expect("known node")
        }
        DecisionAgent::Dqn(net) => {
            let readings: Vec<SensorReading> = nodes
                .iter()
                .map(|n| n.last_reading.clone().unwrap_or_else(|| quiet_reading(n.node)))
                .collect();
            let mut q = net.forward(&state_vector(&readings))?;
            for (v, e) in q.iter_mut().zip(&eligible) {
                if !*e {
                    *v = f64::NEG_INFINITY;
                }
            }
            argmax(&q)
        }
    };
    let n = &nodes[chosen];
    Ok(Some(Decision {
        node: n.node,
        signal: n.signal.as_ref().map_or(0.0, |s| s.signal),
    }))
}
