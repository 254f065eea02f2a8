use std::collections::VecDeque;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sensor::NodeId;

use super::clock::Clock;

/// One verified detection and the time each stage finished.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertEvent {
    pub alert_id: u64,
    pub node: NodeId,
    pub label: String,
    pub azimuth_deg: f64,
    pub signal: f64,
    pub smoke_cells: Vec<(usize, usize)>,
    /// Most recent fire stimulus at or before the trigger, when known.
    pub t_stimulus_ms: Option<u64>,
    pub t_trigger_ms: u64,
    pub t_decided_ms: u64,
    pub t_oriented_ms: u64,
    pub t_verified_ms: u64,
    pub t_dispatched_ms: u64,
    pub attempts: u32,
    pub delivered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyBreakdown {
    pub ingest_ms: Option<u64>,
    pub decision_ms: u64,
    pub rotation_ms: u64,
    pub verification_ms: u64,
    pub dispatch_ms: u64,
    /// From stimulus (or trigger, if none is known) to dispatch.
    pub total_ms: u64,
}

impl AlertEvent {
    pub fn is_monotone(&self) -> bool {
        let chain = [
            self.t_trigger_ms,
            self.t_decided_ms,
            self.t_oriented_ms,
            self.t_verified_ms,
            self.t_dispatched_ms,
        ];
        self.t_stimulus_ms.is_none_or(|s| s <= self.t_trigger_ms)
            && chain.windows(2).all(|w| w[0] <= w[1])
    }

    pub fn breakdown(&self) -> LatencyBreakdown {
        let start = self.t_stimulus_ms.unwrap_or(self.t_trigger_ms);
        LatencyBreakdown {
            ingest_ms: self.t_stimulus_ms.map(|s| self.t_trigger_ms.saturating_sub(s)),
            decision_ms: self.t_decided_ms.saturating_sub(self.t_trigger_ms),
            rotation_ms: self.t_oriented_ms.saturating_sub(self.t_decided_ms),
            verification_ms: self.t_verified_ms.saturating_sub(self.t_oriented_ms),
            dispatch_ms: self.t_dispatched_ms.saturating_sub(self.t_verified_ms),
            total_ms: self.t_dispatched_ms.saturating_sub(start),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SinkError {
    #[error("alert sink unreachable: {0}")]
    Unreachable(String),
    #[error("alert sink rejected the alert: {0}")]
    Rejected(String),
}

pub trait AlertSink: Send {
    fn deliver(&mut self, alert: &AlertEvent) -> Result<(), SinkError>;
}

/// Keeps every delivered alert in memory.
#[derive(Debug, Clone, Default)]
pub struct RecordingSink {
    pub delivered: Vec<AlertEvent>,
}

impl AlertSink for RecordingSink {
    fn deliver(&mut self, alert: &AlertEvent) -> Result<(), SinkError> {
        self.delivered.push(alert.clone());
        Ok(())
    }
}

/// Fails according to a script, then records like [`RecordingSink`].
#[derive(Debug, Clone, Default)]
pub struct ScriptedSink {
    outcomes: VecDeque<bool>,
    pub attempts: usize,
    pub delivered: Vec<AlertEvent>,
}

impl ScriptedSink {
    /// `true` entries succeed, `false` entries fail; afterwards every call succeeds.
    pub fn new(outcomes: impl IntoIterator<Item = bool>) -> Self {
        Self {
            outcomes: outcomes.into_iter().collect(),
            ..Self::default()
        }
    }

    pub fn always_failing() -> Self {
        Self::new(std::iter::repeat_n(false, 1 << 20))
    }
}

impl AlertSink for ScriptedSink {
    fn deliver(&mut self, alert: &AlertEvent) -> Result<(), SinkError> {
        self.attempts += 1;
        if self.outcomes.pop_front().unwrap_or(true) {
            self.delivered.push(alert.clone());
            Ok(())
        } else {
            Err(SinkError::Unreachable("scripted failure".into()))
        }
    }
}

/// POSTs the alert as JSON to a fixed URL.
pub struct WebhookSink {
    url: String,
    agent: ureq::Agent,
}

impl WebhookSink {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            url: url.into(),
            agent,
        }
    }
}

impl AlertSink for WebhookSink {
    fn deliver(&mut self, alert: &AlertEvent) -> Result<(), SinkError> {
        match self.agent.post(&self.url).send_json(alert) {
            Ok(_) => Ok(()),
            Err(ureq::Error::StatusCode(code)) => Err(SinkError::Rejected(format!("HTTP {code}"))),
            Err(e) => Err(SinkError::Unreachable(e.to_string())),
        }
    }
}

impl<S: AlertSink + ?Sized> AlertSink for Box<S> {
    fn deliver(&mut self, alert: &AlertEvent) -> Result<(), SinkError> {
        (**self).deliver(alert)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_backoff_ms: 500,
        }
    }
}

impl RetryPolicy {
    /// Wait after failed attempt `attempt` (1-based): base, 2*base, 4*base, ...
    pub fn backoff_ms(&self, attempt: u32) -> u64 {
        self.base_backoff_ms
            .saturating_mul(1u64 << (attempt.saturating_sub(1)).min(32))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliveryReceipt {
    pub alert_id: u64,
    pub attempts: u32,
    pub delivered: bool,
    pub last_error: Option<String>,
    pub finished_ms: u64,
}

/// Deliver with exponential backoff, waiting on `clock` between attempts.
pub fn dispatch_alert(
    alert: &AlertEvent,
    sink: &mut dyn AlertSink,
    retry: &RetryPolicy,
    clock: &mut dyn Clock,
) -> DeliveryReceipt {
    let mut last_error = None;
    let max = retry.max_attempts.max(1);
    for attempt in 1..=max {
        match sink.deliver(alert) {
            Ok(()) => {
                return DeliveryReceipt {
                    alert_id: alert.alert_id,
                    attempts: attempt,
                    delivered: true,
                    last_error: None,
                    finished_ms: clock.now_ms(),
                }
            }
            Err(e) => last_error = Some(e.to_string()),
        }
        if attempt < max {
            clock.sleep_ms(retry.backoff_ms(attempt));
        }
    }
    DeliveryReceipt {
        alert_id: alert.alert_id,
        attempts: max,
        delivered: false,
        last_error,
        finished_ms: clock.now_ms(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::clock::SimClock;

    pub(crate) fn alert() -> AlertEvent {
        AlertEvent {
            alert_id: 1,
            node: NodeId(0),
            label: "A".into(),
            azimuth_deg: 90.0,
            signal: 0.8,
            smoke_cells: vec![(1, 4)],
            t_stimulus_ms: Some(1000),
            t_trigger_ms: 5000,
            t_decided_ms: 5820,
            t_oriented_ms: 7320,
            t_verified_ms: 109_320,
            t_dispatched_ms: 109_320,
            attempts: 1,
            delivered: true,
        }
    }

    #[test]
    fn breakdown_sums_to_total() {
        let a = alert();
        assert!(a.is_monotone());
        let b = a.breakdown();
        assert_eq!(
            b.ingest_ms.unwrap() + b.decision_ms + b.rotation_ms + b.verification_ms + b.dispatch_ms,
            b.total_ms
        );
        assert_eq!(b.rotation_ms, 1500);
        let mut bad = a.clone();
        bad.t_oriented_ms = 1;
        assert!(!bad.is_monotone());
    }

    #[test]
    fn retries_with_backoff_then_succeeds() {
        let mut sink = ScriptedSink::new([false, false, true]);
        let mut clock = SimClock::new();
        let r = dispatch_alert(&alert(), &mut sink, &RetryPolicy::default(), &mut clock);
        assert!(r.delivered);
        assert_eq!(r.attempts, 3);
        assert_eq!(clock.now_ms(), 500 + 1000);
        assert_eq!(sink.delivered.len(), 1);
    }

    #[test]
    fn gives_up_after_cap() {
        let mut sink = ScriptedSink::always_failing();
        let mut clock = SimClock::new();
        let r = dispatch_alert(&alert(), &mut sink, &RetryPolicy::default(), &mut clock);
        assert!(!r.delivered);
        assert_eq!(r.attempts, 5);
        assert_eq!(sink.attempts, 5);
        assert_eq!(clock.now_ms(), 500 + 1000 + 2000 + 4000);
        assert!(r.last_error.is_some());
    }

    #[test]
    fn webhook_to_closed_port_is_unreachable() {
        let mut sink = WebhookSink::new("http://127.0.0.1:9/alerts", Duration::from_millis(500));
        assert!(matches!(sink.deliver(&alert()), Err(SinkError::Unreachable(_))));
    }
}
