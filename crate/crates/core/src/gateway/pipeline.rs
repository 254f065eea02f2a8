//! The gateway loop as a discrete-event simulation.
//!
//! Nodes sample on their period and transmit through the channel model;
//! the gateway ingests deliveries, decides on its own period, rotates the
//! camera, asks the verifier and dispatches alerts with retry. Every
//! event is ordered by `(time, class, insertion)`, so a run depends only
//! on the scenario, the policy and the agent. With a wall clock the same
//! loop sleeps until each event is due and accepts control events.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::mpsc::{Receiver, RecvTimeoutError};
use std::time::Duration;

use crate::lpwan::transmit;
use crate::sensor::NodeId;
use crate::sim::{keyed_rng, node_tick, ScenarioEvent, ScenarioScript, World, STREAM_CHANNEL};
use crate::vision::{Capture, SmokeVerifier, VerifierVerdict};

use super::alert::{AlertEvent, AlertSink, RecordingSink};
use super::camera::CameraModel;
use super::clock::{Clock, SimClock};
use super::decision::{decide, Decision, DecisionAgent};
use super::policy::GatewayPolicy;
use super::state::{GatewayState, IngestOutcome};
use super::trace::{TraceEvent, TraceLog, TraceRecord};
use super::GatewayError;

/// Hooks for a live run: raw telemetry as received and every trace record.
pub trait PipelineObserver {
    fn on_telemetry(&mut self, _t_ms: u64, _bytes: &[u8]) {}
    fn on_record(&mut self, _record: &TraceRecord) {}
}

pub struct NoObserver;

impl PipelineObserver for NoObserver {}

#[derive(Debug, Clone, Copy)]
struct Stages {
    node: usize,
    signal: f64,
    t_trigger: u64,
    t_decided: u64,
    t_oriented: u64,
}

#[derive(Debug, Clone)]
enum Ev {
    Scenario(ScenarioEvent, &'static str),
    NodeTick(usize),
    Deliver(Vec<u8>),
    Decided(Stages),
    Oriented(Stages),
    Verified(Stages, VerifierVerdict),
    Parked,
    Dispatch(Box<AlertEvent>),
    DecisionTick,
}

impl Ev {
    fn class(&self) -> u8 {
        match self {
            Ev::Scenario(..) => 0,
            Ev::NodeTick(_) => 1,
            Ev::Deliver(_) => 2,
            Ev::DecisionTick => 4,
            _ => 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trace: TraceLog,
    pub alerts: Vec<AlertEvent>,
    pub messages_sent: u64,
    pub frames_delivered: u64,
    pub verifier_calls: u64,
}

pub struct RunIo<'a> {
    pub verifier: &'a mut dyn SmokeVerifier,
    pub sink: &'a mut dyn AlertSink,
    pub clock: &'a mut dyn Clock,
    pub control: Option<Receiver<ScenarioEvent>>,
    pub observer: &'a mut dyn PipelineObserver,
}

struct Run<'a, 'io> {
    script: &'a ScenarioScript,
    policy: &'a GatewayPolicy,
    agent: &'a DecisionAgent,
    io: RunIo<'io>,
    queue: BTreeMap<(u64, u8, u64), Ev>,
    inserted: u64,
    world: World,
    state: GatewayState,
    camera: CameraModel,
    node_seq: Vec<u64>,
    stimulus: Vec<Option<u64>>,
    last_alert: BTreeMap<NodeId, u64>,
    busy: bool,
    next_alert_id: u64,
    trace: TraceLog,
    outcome_counts: (u64, u64, u64),
    alerts: Vec<AlertEvent>,
}

impl<'a, 'io> Run<'a, 'io> {
    fn schedule(&mut self, t: u64, ev: Ev) {
        if t > self.script.duration_ms {
            return;
        }
        let key = (t, ev.class(), self.inserted);
        self.inserted += 1;
        self.queue.insert(key, ev);
    }

    fn log(&mut self, t: u64, event: TraceEvent) {
        let rec = self.trace.push(t, event);
        self.io.observer.on_record(rec);
    }

    fn apply_world(&mut self, t: u64, ev: ScenarioEvent, source: &str) {
        let env = &self.script.environment;
        let before: Vec<f64> = self
            .script
            .nodes
            .iter()
            .map(|n| env.exposure(n.position(), &self.world.fire_list()))
            .collect();
        self.world.apply(&ev);
        if ev.is_fire_stimulus() {
            let fires = self.world.fire_list();
            for (i, n) in self.script.nodes.iter().enumerate() {
                if env.exposure(n.position(), &fires) > before[i] {
                    self.stimulus[i] = Some(t);
                }
            }
        }
        self.log(
            t,
            TraceEvent::Scenario {
                source: source.to_string(),
                change: ev,
            },
        );
    }

    fn node_tick(&mut self, t: u64, idx: usize) {
        let placement = &self.script.nodes[idx];
        let seq = self.node_seq[idx];
        self.node_seq[idx] += 1;
        let msg = node_tick(placement, seq, t, &self.script.environment, &self.world, self.script.seed);
        let mut rng = keyed_rng(self.script.seed, STREAM_CHANNEL, placement.id.0 as u64, seq);
        self.outcome_counts.0 += 1;
        for (at, bytes) in transmit(&msg, t, &self.script.channel, &mut rng) {
            self.schedule(at, Ev::Deliver(bytes));
        }
        let period = self.script.environment.period_ms;
        self.schedule(t + period, Ev::NodeTick(idx));
    }

    fn deliver(&mut self, t: u64, bytes: Vec<u8>) {
        self.outcome_counts.1 += 1;
        self.io.observer.on_telemetry(t, &bytes);
        let outcome = self.state.ingest(&bytes, t);
        let (node, seq, label) = match &outcome {
            IngestOutcome::Accepted { node, seq, rain } => {
                (*node, *seq, if *rain { "rain" } else { "accepted" })
            }
            IngestOutcome::Duplicate { node, seq } => (*node, *seq, "duplicate"),
            IngestOutcome::OutOfOrder { node, seq } => (*node, *seq, "out_of_order"),
            // Simulated nodes only send well-formed frames for placed ids.
            other => unreachable!("simulated frame rejected: {other:?}"),
        };
        let signal = match outcome {
            IngestOutcome::Accepted { rain: false, .. } => {
                self.state.node(node).and_then(|n| n.signal.as_ref()).map(|s| s.signal)
            }
            _ => None,
        };
        self.log(
            t,
            TraceEvent::Telemetry {
                node,
                msg_seq: seq,
                outcome: label.to_string(),
                signal,
            },
        );
    }

    fn node_index(&self, id: NodeId) -> usize {
        self.script
            .nodes
            .iter()
            .position(|n| n.id == id)
            .expect("decisions name placed nodes")
    }

    fn decision_tick(&mut self, t: u64) -> Result<(), GatewayError> {
        self.schedule(t + self.policy.decision.period_ms, Ev::DecisionTick);
        if self.busy {
            return Ok(());
        }
        let d = decide(&self.state, self.agent, t, self.policy.decision.stale_after_ms)?;
        match d {
            Some(Decision { node, signal }) if signal >= self.policy.decision.trigger_threshold => {
                self.busy = true;
                self.log(
                    t,
                    TraceEvent::Decision {
                        node,
                        signal,
                        agent: self.agent.name().to_string(),
                    },
                );
                let stages = Stages {
                    node: self.node_index(node),
                    signal,
                    t_trigger: t,
                    t_decided: t + self.policy.decision.latency_ms,
                    t_oriented: 0,
                };
                self.schedule(stages.t_decided, Ev::Decided(stages));
            }
            _ => self.park(t),
        }
        Ok(())
    }

    fn park(&mut self, t: u64) {
        let Some(home) = self.policy.camera.home_azimuth_deg else {
            return;
        };
        let rotation = self.camera.rotation_ms(home);
        if rotation == 0 {
            return;
        }
        self.busy = true;
        let done = self.camera.orient(home, t);
        self.log(
            t,
            TraceEvent::Park {
                azimuth_deg: self.camera.azimuth_deg(),
                rotation_ms: rotation,
            },
        );
        self.schedule(done, Ev::Parked);
    }

    fn decided(&mut self, t: u64, mut s: Stages) {
        let az = self.script.nodes[s.node].azimuth_deg;
        s.t_oriented = self.camera.orient(az, t);
        self.schedule(s.t_oriented, Ev::Oriented(s));
    }

    fn oriented(&mut self, t: u64, s: Stages) {
        let node = self.script.nodes[s.node].id;
        self.log(
            t,
            TraceEvent::Oriented {
                node,
                azimuth_deg: self.camera.azimuth_deg(),
                rotation_ms: s.t_oriented - s.t_decided,
            },
        );
        let cap = &self.policy.capture;
        let grid = cap.grid();
        let truth = self.camera.visible_smoke(&self.world.fire_list(), grid);
        let capture = Capture::simulated(
            t,
            self.camera.azimuth_deg(),
            grid,
            truth,
            (cap.frame_width, cap.frame_height),
            cap.frames,
        );
        self.outcome_counts.2 += 1;
        match self.io.verifier.verify(&capture) {
            Ok(verdict) => {
                let done = t + verdict.latency_ms;
                self.schedule(done, Ev::Verified(s, verdict));
            }
            Err(e) => {
                self.log(
                    t,
                    TraceEvent::VerifyFailed {
                        node,
                        error: e.to_string(),
                    },
                );
                self.busy = false;
            }
        }
    }

    fn verified(&mut self, t: u64, s: Stages, verdict: VerifierVerdict) {
        let placement = &self.script.nodes[s.node];
        let node = placement.id;
        let cells = verdict.flagged();
        self.log(
            t,
            TraceEvent::Verified {
                node,
                overall: verdict.overall,
                smoke_cells: cells.clone(),
                latency_ms: verdict.latency_ms,
            },
        );
        if !verdict.overall {
            self.busy = false;
            return;
        }
        if let Some(&last) = self.last_alert.get(&node) {
            if t.saturating_sub(last) < self.policy.decision.alert_cooldown_ms {
                self.log(
                    t,
                    TraceEvent::Suppressed {
                        node,
                        reason: "cooldown".into(),
                    },
                );
                self.busy = false;
                return;
            }
        }
        self.last_alert.insert(node, t);
        let alert = AlertEvent {
            alert_id: self.next_alert_id,
            node,
            label: placement.label(),
            azimuth_deg: placement.azimuth_deg,
            signal: s.signal,
            smoke_cells: cells,
            t_stimulus_ms: self.stimulus[s.node].filter(|st| *st <= s.t_trigger),
            t_trigger_ms: s.t_trigger,
            t_decided_ms: s.t_decided,
            t_oriented_ms: s.t_oriented,
            t_verified_ms: t,
            t_dispatched_ms: t,
            attempts: 0,
            delivered: false,
        };
        self.next_alert_id += 1;
        self.schedule(t, Ev::Dispatch(Box::new(alert)));
    }

    fn dispatch(&mut self, t: u64, mut alert: Box<AlertEvent>) {
        alert.attempts += 1;
        alert.t_dispatched_ms = t;
        alert.delivered = true;
        match self.io.sink.deliver(&alert) {
            Ok(()) => self.finish_alert(t, *alert),
            Err(e) => {
                self.log(
                    t,
                    TraceEvent::DispatchFailed {
                        alert_id: alert.alert_id,
                        attempt: alert.attempts,
                        error: e.to_string(),
                    },
                );
                let retry = &self.policy.dispatch;
                if alert.attempts < retry.max_attempts {
                    let next = t + retry.backoff_ms(alert.attempts);
                    alert.delivered = false;
                    self.schedule(next, Ev::Dispatch(alert));
                } else {
                    alert.delivered = false;
                    self.finish_alert(t, *alert);
                }
            }
        }
    }

    fn finish_alert(&mut self, t: u64, alert: AlertEvent) {
        self.alerts.push(alert.clone());
        self.log(t, TraceEvent::Alert(alert));
        self.busy = false;
    }

    /// In live mode, wait for the next event while accepting control input.
    fn wait_for(&mut self, due: Option<u64>) -> bool {
        if self.io.clock.is_simulated() {
            if let Some(t) = due {
                self.io.clock.wait_until(t);
            }
            return due.is_some();
        }
        loop {
            let now = self.io.clock.now_ms();
            if now > self.script.duration_ms {
                return false;
            }
            let limit = due.unwrap_or(self.script.duration_ms + 1);
            if now >= limit {
                return due.is_some();
            }
            let Some(rx) = &self.io.control else {
                self.io.clock.wait_until(limit);
                continue;
            };
            match rx.recv_timeout(Duration::from_millis(limit - now)) {
                Ok(ev) => {
                    let now = self.io.clock.now_ms();
                    self.schedule(now, Ev::Scenario(ev, "control"));
                    return true;
                }
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => self.io.control = None,
            }
        }
    }

    fn run(mut self) -> Result<RunOutcome, GatewayError> {
        for ev in &self.script.events {
            self.schedule(ev.t_ms, Ev::Scenario(ev.event.clone(), "script"));
        }
        for i in 0..self.script.nodes.len() {
            self.schedule(0, Ev::NodeTick(i));
        }
        self.schedule(0, Ev::DecisionTick);

        loop {
            let due = self.queue.keys().next().map(|k| k.0);
            if !self.wait_for(due) {
                break;
            }
            let Some(((t, _, _), ev)) = self.queue.pop_first() else {
                break;
            };
            match ev {
                Ev::Scenario(change, source) => self.apply_world(t, change, source),
                Ev::NodeTick(i) => self.node_tick(t, i),
                Ev::Deliver(bytes) => self.deliver(t, bytes),
                Ev::DecisionTick => self.decision_tick(t)?,
                Ev::Decided(s) => self.decided(t, s),
                Ev::Oriented(s) => self.oriented(t, s),
                Ev::Verified(s, v) => self.verified(t, s, v),
                Ev::Parked => self.busy = false,
                Ev::Dispatch(a) => self.dispatch(t, a),
            }
        }
        Ok(RunOutcome {
            trace: self.trace,
            alerts: self.alerts,
            messages_sent: self.outcome_counts.0,
            frames_delivered: self.outcome_counts.1,
            verifier_calls: self.outcome_counts.2,
        })
    }
}

/// Run the gateway over a scenario with caller-provided verifier, sink and clock.
pub fn run_pipeline(
    script: &ScenarioScript,
    policy: &GatewayPolicy,
    agent: &DecisionAgent,
    io: RunIo<'_>,
) -> Result<RunOutcome, GatewayError> {
    script.validate()?;
    policy.validate()?;
    let agent_checked = agent.clone().checked(script.nodes.len())?;
    let ids: BTreeSet<NodeId> = script.nodes.iter().map(|n| n.id).collect();
    let run = Run {
        script,
        policy,
        agent: &agent_checked,
        io,
        queue: BTreeMap::new(),
        inserted: 0,
        world: World::default(),
        state: GatewayState::new(ids, policy.fusion.clone()),
        camera: CameraModel::new(&policy.camera),
        node_seq: vec![0; script.nodes.len()],
        stimulus: vec![None; script.nodes.len()],
        last_alert: BTreeMap::new(),
        busy: false,
        next_alert_id: 0,
        trace: TraceLog::new(),
        outcome_counts: (0, 0, 0),
        alerts: Vec::new(),
    };
    run.run()
}

/// Simulated-time run with the policy's verifier and an in-memory sink.
pub fn simulate(
    script: &ScenarioScript,
    policy: &GatewayPolicy,
    agent: &DecisionAgent,
) -> Result<RunOutcome, GatewayError> {
    let mut verifier = policy.verifier.build();
    let mut sink = RecordingSink::default();
    let mut clock = SimClock::new();
    run_pipeline(
        script,
        policy,
        agent,
        RunIo {
            verifier: verifier.as_mut(),
            sink: &mut sink,
            clock: &mut clock,
            control: None,
            observer: &mut NoObserver,
        },
    )
}
