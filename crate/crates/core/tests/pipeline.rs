use forest_core::gateway::{
    detection_summary, replay, run_pipeline, simulate, DecisionAgent, GatewayPolicy, NoObserver,
    RunIo, RunOutcome, ScriptedSink, SimClock, TraceEvent, TraceLog,
};
use forest_core::sensor::NodeId;
use forest_core::sim::{NodePlacement, ScenarioEvent, ScenarioScript, TimedEvent};
use forest_core::vision::{MockScript, MockVerifier, VerifierConfig};

fn scenarios() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn load(name: &str) -> (ScenarioScript, GatewayPolicy) {
    let dir = scenarios();
    let read = |f: String| std::fs::read_to_string(dir.join(f)).unwrap();
    let script = ScenarioScript::from_toml_str(&read(format!("{name}.toml"))).unwrap();
    let policy = GatewayPolicy::from_toml_str(&read(format!("{name}-policy.toml"))).unwrap();
    (script, policy)
}

fn two_nodes(events: Vec<TimedEvent>, duration_ms: u64) -> ScenarioScript {
    let node = |id: u16, az: f64| NodePlacement {
        id: NodeId(id),
        label: None,
        azimuth_deg: az,
        distance_m: 20.0,
    };
    ScenarioScript {
        scenario_version: 1,
        seed: 3,
        duration_ms,
        environment: Default::default(),
        channel: Default::default(),
        nodes: vec![node(0, 90.0), node(1, 270.0)],
        events,
    }
}

fn fire_at(t_ms: u64, az: f64) -> TimedEvent {
    TimedEvent {
        t_ms,
        event: ScenarioEvent::PlaceFire {
            fire: 1,
            azimuth_deg: az,
            distance_m: 20.5,
            intensity: 1.0,
        },
    }
}

fn quick_policy() -> GatewayPolicy {
    let mut p = GatewayPolicy::default();
    p.decision.trigger_threshold = 0.3;
    p.verifier = VerifierConfig::Mock {
        script: MockScript::Truth,
        latency_ms: 2000,
        fail_first: 0,
    };
    p
}

fn run_with(
    script: &ScenarioScript,
    policy: &GatewayPolicy,
    verifier: &mut MockVerifier,
    sink: &mut ScriptedSink,
) -> RunOutcome {
    let mut clock = SimClock::new();
    run_pipeline(
        script,
        policy,
        &DecisionAgent::Fallback,
        RunIo {
            verifier,
            sink,
            clock: &mut clock,
            control: None,
            observer: &mut NoObserver,
        },
    )
    .unwrap()
}

#[test]
fn deployment_run_is_clean_and_complete() {
    let (script, policy) = load("deployment");
    let out = simulate(&script, &policy, &DecisionAgent::Fallback).unwrap();
    let report = replay(&out.trace);
    assert!(report.violations.is_empty(), "{:?}", report.violations);
    let rows = detection_summary(&out.alerts);
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.times_s.len() == 5));
}

#[test]
fn stage_latencies_sum_to_end_to_end() {
    let (script, policy) = load("deployment");
    let out = simulate(&script, &policy, &DecisionAgent::Fallback).unwrap();
    for a in &out.alerts {
        assert!(a.is_monotone());
        let b = a.breakdown();
        let parts = b.ingest_ms.unwrap() + b.decision_ms + b.rotation_ms + b.verification_ms + b.dispatch_ms;
        assert_eq!(parts, b.total_ms);
        assert_eq!(b.decision_ms, 820);
        assert_eq!(b.verification_ms, 102_000);
    }
}

#[test]
fn same_inputs_same_trace_bytes() {
    let (script, policy) = load("deployment");
    let a = simulate(&script, &policy, &DecisionAgent::Fallback).unwrap();
    let b = simulate(&script, &policy, &DecisionAgent::Fallback).unwrap();
    assert_eq!(a.trace.to_jsonl(), b.trace.to_jsonl());
    let mut other = script.clone();
    other.seed += 1;
    let c = simulate(&other, &policy, &DecisionAgent::Fallback).unwrap();
    assert_ne!(a.trace.to_jsonl(), c.trace.to_jsonl());
}

#[test]
fn trace_log_reads_back_identically() {
    let (script, policy) = load("deployment");
    let out = simulate(&script, &policy, &DecisionAgent::Fallback).unwrap();
    let bytes = out.trace.to_jsonl();
    let back = TraceLog::read_jsonl(bytes.as_slice()).unwrap();
    assert_eq!(back, out.trace);
    assert_eq!(back.alerts(), out.alerts);
}

#[test]
fn quiet_scenario_raises_no_alert() {
    let script = two_nodes(vec![], 120_000);
    let out = simulate(&script, &quick_policy(), &DecisionAgent::Fallback).unwrap();
    assert!(out.alerts.is_empty());
    assert_eq!(out.verifier_calls, 0);
}

#[test]
fn camera_turns_to_the_burning_sector() {
    let script = two_nodes(vec![fire_at(10_000, 270.0)], 60_000);
    let out = simulate(&script, &quick_policy(), &DecisionAgent::Fallback).unwrap();
    assert_eq!(out.alerts.len(), 1);
    let a = &out.alerts[0];
    assert_eq!(a.node, NodeId(1));
    assert_eq!(a.t_stimulus_ms, Some(10_000));
    // 0 -> 270 is a 90 degree turn the short way.
    assert_eq!(a.breakdown().rotation_ms, 1500);
    assert_eq!(a.smoke_cells, vec![(1, 4)]);
}

#[test]
fn raining_node_is_never_chosen() {
    let rain = TimedEvent {
        t_ms: 0,
        event: ScenarioEvent::RainStart { node: NodeId(1) },
    };
    let script = two_nodes(vec![rain, fire_at(10_000, 270.0)], 60_000);
    let out = simulate(&script, &quick_policy(), &DecisionAgent::Fallback).unwrap();
    assert!(out.alerts.is_empty());
    assert!(!out.trace.records().iter().any(|r| matches!(
        &r.event,
        TraceEvent::Decision { node, .. } if *node == NodeId(1)
    )));
}

#[test]
fn verifier_failure_suppresses_then_recovers() {
    let script = two_nodes(vec![fire_at(10_000, 90.0)], 60_000);
    let policy = quick_policy();
    let mut verifier = MockVerifier::new(MockScript::Truth).with_latency(2000).failing_first(1);
    let mut sink = ScriptedSink::new([]);
    let out = run_with(&script, &policy, &mut verifier, &mut sink);
    let failures = out
        .trace
        .records()
        .iter()
        .filter(|r| matches!(r.event, TraceEvent::VerifyFailed { .. }))
        .count();
    assert_eq!(failures, 1);
    assert_eq!(out.alerts.len(), 1);
    assert_eq!(sink.delivered.len(), 1);
}

#[test]
fn dispatch_retries_with_backoff() {
    let script = two_nodes(vec![fire_at(10_000, 90.0)], 60_000);
    let policy = quick_policy();
    let mut verifier = MockVerifier::new(MockScript::Truth).with_latency(2000);
    let mut sink = ScriptedSink::new([false, false]);
    let out = run_with(&script, &policy, &mut verifier, &mut sink);
    let a = &out.alerts[0];
    assert!(a.delivered);
    assert_eq!(a.attempts, 3);
    assert_eq!(a.breakdown().dispatch_ms, 500 + 1000);
}

#[test]
fn dispatch_gives_up_after_cap() {
    let script = two_nodes(vec![fire_at(10_000, 90.0)], 60_000);
    let policy = quick_policy();
    let mut verifier = MockVerifier::new(MockScript::Truth).with_latency(2000);
    let mut sink = ScriptedSink::always_failing();
    let out = run_with(&script, &policy, &mut verifier, &mut sink);
    let a = &out.alerts[0];
    assert!(!a.delivered);
    assert_eq!(a.attempts, 5);
    assert!(detection_summary(&out.alerts).is_empty());
}

#[test]
fn cooldown_limits_repeat_alerts() {
    let script = two_nodes(vec![fire_at(10_000, 90.0)], 200_000);
    let mut policy = quick_policy();
    policy.decision.alert_cooldown_ms = 60_000;
    let out = simulate(&script, &policy, &DecisionAgent::Fallback).unwrap();
    assert!(out.alerts.len() >= 2);
    for w in out.alerts.windows(2) {
        assert!(w[1].t_verified_ms - w[0].t_verified_ms >= 60_000);
    }
    assert!(out
        .trace
        .records()
        .iter()
        .any(|r| matches!(r.event, TraceEvent::Suppressed { .. })));
}

#[test]
fn channel_loss_matches_configured_rate() {
    let mut script = two_nodes(vec![], 2_500_000);
    script.channel.loss_probability = 0.2;
    let out = simulate(&script, &quick_policy(), &DecisionAgent::Fallback).unwrap();
    let loss = 1.0 - out.frames_delivered as f64 / out.messages_sent as f64;
    assert!((loss - 0.2).abs() < 0.02, "loss {loss}");
}

#[test]
fn duplicates_are_applied_once() {
    let mut script = two_nodes(vec![], 100_000);
    script.channel.duplicate_probability = 1.0;
    let out = simulate(&script, &quick_policy(), &DecisionAgent::Fallback).unwrap();
    let accepted = out
        .trace
        .records()
        .iter()
        .filter(|r| matches!(&r.event, TraceEvent::Telemetry { outcome, .. } if outcome == "accepted"))
        .count() as u64;
    // Frames due after the run ends are never delivered.
    assert_eq!(out.frames_delivered, 2 * accepted);
    assert!(out.messages_sent - accepted <= 2);
}

#[test]
fn live_run_accepts_control_events() {
    use forest_core::gateway::{RecordingSink, WallClock};
    let mut script = two_nodes(vec![], 2500);
    script.environment.period_ms = 100;
    let mut policy = quick_policy();
    policy.decision.period_ms = 200;
    policy.decision.latency_ms = 10;
    let mut verifier = MockVerifier::new(MockScript::Truth).with_latency(50);
    let mut sink = RecordingSink::default();
    let mut clock = WallClock::new();
    let (tx, rx) = std::sync::mpsc::channel();
    let sender = std::thread::spawn(move || {
        std::thread::sleep(std::time::Duration::from_millis(300));
        tx.send(ScenarioEvent::PlaceFire {
            fire: 7,
            azimuth_deg: 90.0,
            distance_m: 20.5,
            intensity: 1.0,
        })
        .unwrap();
    });
    let out = run_pipeline(
        &script,
        &policy,
        &DecisionAgent::Fallback,
        RunIo {
            verifier: &mut verifier,
            sink: &mut sink,
            clock: &mut clock,
            control: Some(rx),
            observer: &mut NoObserver,
        },
    )
    .unwrap();
    sender.join().unwrap();
    assert!(out.trace.records().iter().any(|r| matches!(
        &r.event,
        TraceEvent::Scenario { source, .. } if source == "control"
    )));
    assert_eq!(sink.delivered.len(), 1);
    assert_eq!(sink.delivered[0].node, NodeId(0));
    assert!(replay(&out.trace).violations.is_empty());
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn alert_stages_are_monotone(seed in any::<u64>(), t0 in 1_000u64..60_000, az in 0.0f64..360.0, cooldown in 0u64..120_000) {
            let mut script = two_nodes(vec![fire_at(t0, az)], 240_000);
            script.seed = seed;
            let mut policy = quick_policy();
            policy.decision.alert_cooldown_ms = cooldown;
            let out = simulate(&script, &policy, &DecisionAgent::Fallback).unwrap();
            for a in &out.alerts {
                prop_assert!(a.is_monotone(), "{:?}", a);
                prop_assert!(a.t_stimulus_ms.is_none_or(|s| s <= a.t_trigger_ms));
            }
            prop_assert!(replay(&out.trace).violations.is_empty());
        }
    }
}
