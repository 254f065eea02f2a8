use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::sensor::FusionWeights;
use crate::vision::{GridSpec, VerifierConfig};

use super::alert::RetryPolicy;
use super::camera::CameraConfig;
use super::GatewayError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecisionConfig {
    pub period_ms: u64,
    /// Time the agent takes to produce a decision.
    pub latency_ms: u64,
    /// Nodes silent for longer than this are not eligible.
    pub stale_after_ms: u64,
    /// Minimum fused signal of the chosen node before the camera moves.
    pub trigger_threshold: f64,
    /// No two delivered alerts for one node within this window.
    pub alert_cooldown_ms: u64,
    /// Trained network; the fused-signal ranking is used when absent.
    pub checkpoint: Option<PathBuf>,
}

impl Default for DecisionConfig {
    fn default() -> Self {
        Self {
            period_ms: 5000,
            latency_ms: 820,
            stale_after_ms: 30_000,
            trigger_threshold: 0.0,
            alert_cooldown_ms: 60_000,
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaptureConfig {
    pub frame_width: usize,
    pub frame_height: usize,
    pub frames: usize,
    pub grid_cols: usize,
    pub grid_rows: usize,
}

impl Default for CaptureConfig {
    fn default() -> Self {
        let grid = GridSpec::default();
        Self {
            frame_width: 1920,
            frame_height: 1080,
            frames: 16,
            grid_cols: grid.cols,
            grid_rows: grid.rows,
        }
    }
}

impl CaptureConfig {
    pub fn grid(&self) -> GridSpec {
        GridSpec {
            cols: self.grid_cols,
            rows: self.grid_rows,
        }
    }
}

/// Everything the gateway loop is configured with.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayPolicy {
    pub decision: DecisionConfig,
    pub fusion: FusionWeights,
    pub camera: CameraConfig,
    pub capture: CaptureConfig,
    pub verifier: VerifierConfig,
    pub dispatch: RetryPolicy,
}

impl GatewayPolicy {
    pub fn from_toml_str(text: &str) -> Result<Self, GatewayError> {
        let p: Self = toml::from_str(text).map_err(|e| GatewayError::Policy(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("policy serializes")
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: &str| Err(GatewayError::Policy(m.to_string()));
        if self.decision.period_ms == 0 {
            return bad("decision.period_ms must be positive");
        }
        if !self.decision.trigger_threshold.is_finite() {
            return bad("decision.trigger_threshold must be finite");
        }
        if !(self.camera.speed_deg_per_s > 0.0 && self.camera.speed_deg_per_s.is_finite()) {
            return bad("camera.speed_deg_per_s must be positive");
        }
        if !(self.camera.fov_deg > 0.0 && self.camera.fov_deg <= 360.0) {
            return bad("camera.fov_deg must be within (0, 360]");
        }
        if self.capture.grid_cols == 0 || self.capture.grid_rows == 0 {
            return bad("capture grid must have at least one cell");
        }
        if self.dispatch.max_attempts == 0 {
            return bad("dispatch.max_attempts must be at least 1");
        }
        self.fusion
            .validate()
            .map_err(|e| GatewayError::Policy(format!("fusion: {e}")))
    }
}
