//! Smoke verification behind a trait: a scripted mock for simulation and
//! an HTTP client for an external model server.

use std::time::{Duration, Instant};

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::frame::{preprocess, split_grid, Frame, GridSpec, MODEL_INPUT_SIDE};
use super::synth::render_smoke_scene;

/// Mean verification time of the long-range smoke model, in milliseconds.
pub const DEFAULT_VERIFY_LATENCY_MS: u64 = 102_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifierError {
    #[error("verifier unreachable: {0}")]
    Unreachable(String),
    #[error("verifier timed out")]
    Timeout,
    #[error("verifier returned an invalid response: {0}")]
    BadResponse(String),
    #[error("verifier input: {0}")]
    Input(String),
    #[error("scripted verifier failure")]
    Injected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierVerdict {
    /// `rows x cols` smoke flags.
    pub cells: Vec<Vec<bool>>,
    pub overall: bool,
    pub latency_ms: u64,
}

impl VerifierVerdict {
    pub fn from_cells(cells: Vec<Vec<bool>>, latency_ms: u64) -> Self {
        let overall = cells.iter().flatten().any(|c| *c);
        Self {
            cells,
            overall,
            latency_ms,
        }
    }

    pub fn flagged(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (r, row) in self.cells.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                if *v {
                    out.push((r, c));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
enum FrameSource {
    Frames(Vec<Frame>),
    Scene {
        width: usize,
        height: usize,
        count: usize,
    },
}

/// What the camera saw when it stopped rotating.
#[derive(Debug, Clone, PartialEq)]
pub struct Capture {
    pub t_ms: u64,
    pub azimuth_deg: f64,
    pub grid: GridSpec,
    /// Cells that really contain smoke, when the capture is simulated.
    pub truth_cells: Vec<(usize, usize)>,
    source: FrameSource,
}

impl Capture {
    pub fn from_frames(frames: Vec<Frame>, grid: GridSpec) -> Self {
        Self {
            t_ms: 0,
            azimuth_deg: 0.0,
            grid,
            truth_cells: Vec::new(),
            source: FrameSource::Frames(frames),
        }
    }

    /// A simulated view whose frames are rendered only if someone asks.
    pub fn simulated(
        t_ms: u64,
        azimuth_deg: f64,
        grid: GridSpec,
        truth_cells: Vec<(usize, usize)>,
        frame_size: (usize, usize),
        frame_count: usize,
    ) -> Self {
        Self {
            t_ms,
            azimuth_deg,
            grid,
            truth_cells,
            source: FrameSource::Scene {
                width: frame_size.0,
                height: frame_size.1,
                count: frame_count,
            },
        }
    }

    pub fn frames(&self) -> Vec<Frame> {
        match &self.source {
            FrameSource::Frames(f) => f.clone(),
            FrameSource::Scene {
                width,
                height,
                count,
            } => (0..*count)
                .map(|i| render_smoke_scene(*width, *height, self.grid, &self.truth_cells, i))
                .collect(),
        }
    }
}

pub trait SmokeVerifier: Send {
    fn verify(&mut self, capture: &Capture) -> Result<VerifierVerdict, VerifierError>;
}

impl<T: SmokeVerifier + ?Sized> SmokeVerifier for Box<T> {
    fn verify(&mut self, capture: &Capture) -> Result<VerifierVerdict, VerifierError> {
        (**self).verify(capture)
    }
}

/// Run the verifier over a plain frame window.
pub fn verify_smoke<V: SmokeVerifier + ?Sized>(
    window: &[Frame],
    grid: GridSpec,
    verifier: &mut V,
) -> Result<VerifierVerdict, VerifierError> {
    verifier.verify(&Capture::from_frames(window.to_vec(), grid))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum MockScript {
    /// Never sees smoke.
    AllClear,
    /// Always reports these `(row, col)` cells.
    Cells { cells: Vec<(usize, usize)> },
    /// One entry per call, the last one repeating.
    Sequence { steps: Vec<Vec<(usize, usize)>> },
    /// Reports exactly the capture's ground-truth cells.
    Truth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MockVerifier {
    pub script: MockScript,
    pub latency_ms: u64,
    /// Number of upcoming calls that fail before the script resumes.
    pub fail_next: usize,
    calls: usize,
}

impl MockVerifier {
    pub fn new(script: MockScript) -> Self {
        Self {
            script,
            latency_ms: DEFAULT_VERIFY_LATENCY_MS,
            fail_next: 0,
            calls: 0,
        }
    }

    pub fn with_latency(mut self, latency_ms: u64) -> Self {
        self.latency_ms = latency_ms;
        self
    }

    pub fn failing_first(mut self, n: usize) -> Self {
        self.fail_next = n;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls
    }
}

impl SmokeVerifier for MockVerifier {
    fn verify(&mut self, capture: &Capture) -> Result<VerifierVerdict, VerifierError> {
        let call = self.calls;
        self.calls += 1;
        if self.fail_next > 0 {
            self.fail_next -= 1;
            return Err(VerifierError::Injected);
        }
        let flagged: &[(usize, usize)] = match &self.script {
            MockScript::AllClear => &[],
            MockScript::Cells { cells } => cells,
            MockScript::Sequence { steps } => steps
                .get(call)
                .or(steps.last())
                .map(Vec::as_slice)
                .unwrap_or(&[]),
            MockScript::Truth => &capture.truth_cells,
        };
        let grid = capture.grid;
        let mut cells = vec![vec![false; grid.cols]; grid.rows];
        for &(r, c) in flagged {
            if r < grid.rows && c < grid.cols {
                cells[r][c] = true;
            }
        }
        Ok(VerifierVerdict::from_cells(cells, self.latency_ms))
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RemoteCell {
    pub row: usize,
    pub col: usize,
    /// `frames` concatenated 240x240 gray images, base64.
    pub data: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RemoteRequest {
    pub grid: GridSpec,
    pub frames: usize,
    pub cell_width: usize,
    pub cell_height: usize,
    pub cells: Vec<RemoteCell>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RemoteResponse {
    pub cells: Vec<Vec<bool>>,
}

/// Builds the request body: every grid cell of every frame, preprocessed.
pub fn build_remote_request(frames: &[Frame], grid: GridSpec) -> Result<RemoteRequest, VerifierError> {
    let mut per_cell: Vec<Vec<u8>> = vec![Vec::new(); grid.cell_count()];
    for f in frames {
        let cells = split_grid(f, grid).map_err(|e| VerifierError::Input(e.to_string()))?;
        for (i, cell) in cells.iter().enumerate() {
            let p = preprocess(&cell.frame).map_err(|e| VerifierError::Input(e.to_string()))?;
            per_cell[i].extend_from_slice(&p.data);
        }
    }
    let b64 = base64::engine::general_purpose::STANDARD;
    Ok(RemoteRequest {
        grid,
        frames: frames.len(),
        cell_width: MODEL_INPUT_SIDE,
        cell_height: MODEL_INPUT_SIDE,
        cells: per_cell
            .into_iter()
            .enumerate()
            .map(|(i, bytes)| RemoteCell {
                row: i / grid.cols,
                col: i % grid.cols,
                data: b64.encode(bytes),
            })
            .collect(),
    })
}

pub struct RemoteVerifier {
    url: String,
    agent: ureq::Agent,
}

impl RemoteVerifier {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            url: url.into(),
            agent,
        }
    }
}

fn map_ureq(e: ureq::Error) -> VerifierError {
    match e {
        ureq::Error::Timeout(_) => VerifierError::Timeout,
        ureq::Error::StatusCode(code) => VerifierError::BadResponse(format!("HTTP {code}")),
        ureq::Error::Json(e) => VerifierError::BadResponse(e.to_string()),
        other => VerifierError::Unreachable(other.to_string()),
    }
}

impl SmokeVerifier for RemoteVerifier {
    fn verify(&mut self, capture: &Capture) -> Result<VerifierVerdict, VerifierError> {
        let started = Instant::now();
        let request = build_remote_request(&capture.frames(), capture.grid)?;
        let response: RemoteResponse = self
            .agent
            .post(&self.url)
            .send_json(&request)
            .map_err(map_ureq)?
            .body_mut()
            .read_json()
            .map_err(map_ureq)?;
        let grid = capture.grid;
        if response.cells.len() != grid.rows || response.cells.iter().any(|r| r.len() != grid.cols) {
            return Err(VerifierError::BadResponse(format!(
                "expected {}x{} cells",
                grid.rows, grid.cols
            )));
        }
        Ok(VerifierVerdict::from_cells(
            response.cells,
            started.elapsed().as_millis() as u64,
        ))
    }
}

/// Verifier selection as it appears in policy files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VerifierConfig {
    Mock {
        #[serde(flatten)]
        script: MockScript,
        #[serde(default = "default_latency")]
        latency_ms: u64,
        #[serde(default)]
        fail_first: usize,
    },
    Remote {
        url: String,
        #[serde(default = "default_timeout")]
        timeout_ms: u64,
    },
}

fn default_latency() -> u64 {
    DEFAULT_VERIFY_LATENCY_MS
}

fn default_timeout() -> u64 {
    180_000
}

impl Default for VerifierConfig {
    fn default() -> Self {
        VerifierConfig::Mock {
            script: MockScript::Truth,
            latency_ms: DEFAULT_VERIFY_LATENCY_MS,
            fail_first: 0,
        }
    }
}

impl VerifierConfig {
    pub fn build(&self) -> Box<dyn SmokeVerifier> {
        match self {
            VerifierConfig::Mock {
                script,
                latency_ms,
                fail_first,
            } => Box::new(
                MockVerifier::new(script.clone())
                    .with_latency(*latency_ms)
                    .failing_first(*fail_first),
            ),
            VerifierConfig::Remote { url, timeout_ms } => {
                Box::new(RemoteVerifier::new(url.clone(), Duration::from_millis(*timeout_ms)))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn capture() -> Capture {
        Capture::simulated(0, 0.0, GridSpec::default(), vec![(1, 3)], (64, 32), 2)
    }

    #[test]
    fn all_clear_mock() {
        let mut v = MockVerifier::new(MockScript::AllClear);
        let verdict = v.verify(&capture()).unwrap();
        assert!(!verdict.overall);
        assert_eq!(verdict.latency_ms, 102_000);
        assert_eq!((verdict.cells.len(), verdict.cells[0].len()), (4, 8));
    }

    #[test]
    fn scripted_single_cell() {
        let mut v = MockVerifier::new(MockScript::Cells { cells: vec![(2, 5)] });
        let verdict = verify_smoke(&[Frame::gray(8, 4, 0)], GridSpec::default(), &mut v).unwrap();
        assert!(verdict.overall);
        assert_eq!(verdict.flagged(), vec![(2, 5)]);
    }

    #[test]
    fn truth_and_sequence_modes() {
        let mut truth = MockVerifier::new(MockScript::Truth);
        assert_eq!(truth.verify(&capture()).unwrap().flagged(), vec![(1, 3)]);
        let mut seq = MockVerifier::new(MockScript::Sequence {
            steps: vec![vec![], vec![(0, 0)]],
        });
        assert!(!seq.verify(&capture()).unwrap().overall);
        assert!(seq.verify(&capture()).unwrap().overall);
        assert!(seq.verify(&capture()).unwrap().overall);
    }

    #[test]
    fn injected_failures_then_recover() {
        let mut v = MockVerifier::new(MockScript::Truth).failing_first(2);
        assert_eq!(v.verify(&capture()), Err(VerifierError::Injected));
        assert_eq!(v.verify(&capture()), Err(VerifierError::Injected));
        assert!(v.verify(&capture()).unwrap().overall);
        assert_eq!(v.calls(), 3);
    }

    #[test]
    fn request_body_shape() {
        let frames = vec![Frame::rgb(1920, 1080, [10, 20, 30]); 2];
        let req = build_remote_request(&frames, GridSpec::default()).unwrap();
        assert_eq!(req.cells.len(), 32);
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(&req.cells[31].data)
            .unwrap();
        assert_eq!(bytes.len(), 2 * 240 * 240);
        assert_eq!((req.cells[31].row, req.cells[31].col), (3, 7));
    }

    #[test]
    fn config_parses() {
        let cfg: VerifierConfig =
            toml::from_str("kind = \"mock\"\nmode = \"cells\"\ncells = [[2, 5]]\nlatency_ms = 5\n").unwrap();
        assert_eq!(
            cfg,
            VerifierConfig::Mock {
                script: MockScript::Cells { cells: vec![(2, 5)] },
                latency_ms: 5,
                fail_first: 0
            }
        );
        let remote: VerifierConfig = toml::from_str("kind = \"remote\"\nurl = \"http://x\"\n").unwrap();
        assert!(matches!(remote, VerifierConfig::Remote { timeout_ms: 180_000, .. }));
    }
}
