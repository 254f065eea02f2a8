//! The gateway: ingest, sector decision, camera orientation, verification
//! and alert dispatch.

pub mod alert;
pub mod camera;
pub mod clock;
pub mod decision;
pub mod pipeline;
pub mod policy;
pub mod state;
pub mod trace;

use thiserror::Error;

pub use alert::{
    dispatch_alert, AlertEvent, AlertSink, DeliveryReceipt, LatencyBreakdown, RecordingSink,
    RetryPolicy, ScriptedSink, SinkError, WebhookSink,
};
pub use camera::{normalize_deg, shortest_turn_deg, CameraConfig, CameraModel};
pub use clock::{Clock, SimClock, WallClock};
pub use decision::{decide, Decision, DecisionAgent};
pub use pipeline::{run_pipeline, simulate, NoObserver, PipelineObserver, RunIo, RunOutcome};
pub use policy::{CaptureConfig, DecisionConfig, GatewayPolicy};
pub use state::{GatewayState, IngestOutcome, NodeState};
pub use trace::{
    detection_summary, render_summary_csv, render_summary_text, replay, NodeDetections,
    ReplayReport, TraceError, TraceEvent, TraceLog, TraceRecord,
};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("policy: {0}")]
    Policy(String),
    #[error(transparent)]
    Scenario(#[from] crate::sim::SimError),
    #[error(transparent)]
    Agent(#[from] crate::dqn::DqnError),
}
