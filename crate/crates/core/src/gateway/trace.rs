//! Line-delimited JSON event log of a gateway run, and the analysis run over it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sensor::NodeId;
use crate::sim::ScenarioEvent;

use super::alert::{AlertEvent, LatencyBreakdown};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Scenario {
        source: String,
        #[serde(flatten)]
        change: ScenarioEvent,
    },
    Telemetry {
        node: NodeId,
        msg_seq: u64,
        outcome: String,
        signal: Option<f64>,
    },
    Decision {
        node: NodeId,
        signal: f64,
        agent: String,
    },
    Hold {
        reason: String,
    },
    Park {
        azimuth_deg: f64,
        rotation_ms: u64,
    },
    Oriented {
        node: NodeId,
        azimuth_deg: f64,
        rotation_ms: u64,
    },
    Verified {
        node: NodeId,
        overall: bool,
        smoke_cells: Vec<(usize, usize)>,
        latency_ms: u64,
    },
    VerifyFailed {
        node: NodeId,
        error: String,
    },
    Suppressed {
        node: NodeId,
        reason: String,
    },
    DispatchFailed {
        alert_id: u64,
        attempt: u32,
        error: String,
    },
    Alert(AlertEvent),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub seq: u64,
    pub t_ms: u64,
    #[serde(flatten)]
    pub event: TraceEvent,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("trace i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraceLog {
    records: Vec<TraceRecord>,
}

impl TraceLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, t_ms: u64, event: TraceEvent) -> &TraceRecord {
        let seq = self.records.len() as u64;
        self.records.push(TraceRecord { seq, t_ms, event });
        self.records.last().expect("just pushed")
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn alerts(&self) -> Vec<AlertEvent> {
        self.records
            .iter()
            .filter_map(|r| match &r.event {
                TraceEvent::Alert(a) => Some(a.clone()),
                _ => None,
            })
            .collect()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        buf
    }

    /// Parse a log; blank lines are skipped, anything else must be a record.
    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, TraceError> {
        let mut records = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: TraceRecord = serde_json::from_str(&line).map_err(|e| TraceError::Corrupt {
                line: i + 1,
                message: e.to_string(),
            })?;
            records.push(rec);
        }
        Ok(Self { records })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub records: usize,
    pub alerts: Vec<(AlertEvent, LatencyBreakdown)>,
    pub violations: Vec<String>,
}

/// Recompute per-alert latency parts and check ordering invariants.
pub fn replay(log: &TraceLog) -> ReplayReport {
    let mut violations = Vec::new();
    let mut last_t = 0;
    for (i, r) in log.records().iter().enumerate() {
        if r.seq != i as u64 {
            violations.push(format!("record {i}: seq {} out of order", r.seq));
        }
        if r.t_ms < last_t {
            violations.push(format!("record {}: time {} before {}", r.seq, r.t_ms, last_t));
        }
        last_t = last_t.max(r.t_ms);
    }
    let mut alerts = Vec::new();
    for r in log.records() {
        if let TraceEvent::Alert(a) = &r.event {
            if !a.is_monotone() {
                violations.push(format!("alert {}: stage timestamps not monotone", a.alert_id));
            }
            if a.t_dispatched_ms != r.t_ms {
                violations.push(format!(
                    "alert {}: logged at {} but dispatched at {}",
                    a.alert_id, r.t_ms, a.t_dispatched_ms
                ));
            }
            alerts.push((a.clone(), a.breakdown()));
        }
    }
    ReplayReport {
        records: log.records().len(),
        alerts,
        violations,
    }
}

impl ReplayReport {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "records: {}", self.records);
        let _ = writeln!(s, "alerts: {}", self.alerts.len());
        if !self.alerts.is_empty() {
            let _ = writeln!(
                s,
                "{:>5} {:>5} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}",
                "id", "node", "ingest_s", "decide_s", "rotate_s", "verify_s", "dispatch_s", "total_s"
            );
        }
        for (a, b) in &self.alerts {
            let secs = |ms: u64| ms as f64 / 1000.0;
            let _ = writeln!(
                s,
                "{:>5} {:>5} {:>9} {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>9.3}",
                a.alert_id,
                a.label,
                b.ingest_ms.map_or("-".to_string(), |v| format!("{:.3}", secs(v))),
                secs(b.decision_ms),
                secs(b.rotation_ms),
                secs(b.verification_ms),
                secs(b.dispatch_ms),
                secs(b.total_ms),
            );
        }
        let _ = writeln!(s, "violations: {}", self.violations.len());
        for v in &self.violations {
            let _ = writeln!(s, "  {v}");
        }
        s
    }
}

/// Per-node detection times, stimulus to dispatch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeDetections {
    pub node: NodeId,
    pub label: String,
    pub times_s: Vec<f64>,
}

impl NodeDetections {
    pub fn mean_s(&self) -> Option<f64> {
        if self.times_s.is_empty() {
            None
        } else {
            Some(self.times_s.iter().sum::<f64>() / self.times_s.len() as f64)
        }
    }
}

/// Group delivered alerts that have a known stimulus by node.
pub fn detection_summary(alerts: &[AlertEvent]) -> Vec<NodeDetections> {
    let mut by_node: BTreeMap<NodeId, NodeDetections> = BTreeMap::new();
    for a in alerts.iter().filter(|a| a.delivered) {
        let Some(t0) = a.t_stimulus_ms else { continue };
        by_node
            .entry(a.node)
            .or_insert_with(|| NodeDetections {
                node: a.node,
                label: a.label.clone(),
                times_s: Vec::new(),
            })
            .times_s
            .push((a.t_dispatched_ms - t0) as f64 / 1000.0);
    }
    by_node.into_values().collect()
}

pub fn render_summary_text(rows: &[NodeDetections]) -> String {
    let trials = rows.iter().map(|r| r.times_s.len()).max().unwrap_or(0);
    let mut s = String::new();
    let _ = write!(s, "{:<6}", "node");
    for i in 1..=trials {
        let _ = write!(s, " {:>8}", format!("t{i}"));
    }
    let _ = writeln!(s, " {:>8}", "mean");
    for r in rows {
        let _ = write!(s, "{:<6}", r.label);
        for i in 0..trials {
            match r.times_s.get(i) {
                Some(t) => {
                    let _ = write!(s, " {:>8.1}", t);
                }
                None => {
                    let _ = write!(s, " {:>8}", "-");
                }
            }
        }
        let _ = writeln!(s, " {:>8.1}", r.mean_s().unwrap_or(f64::NAN));
    }
    s
}

pub fn render_summary_csv(rows: &[NodeDetections]) -> String {
    let mut s = String::from("node,label,trial,detection_s\n");
    for r in rows {
        for (i, t) in r.times_s.iter().enumerate() {
            let _ = writeln!(s, "{},{},{},{:.3}", r.node.0, r.label, i + 1, t);
        }
    }
    s
}
