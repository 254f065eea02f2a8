//! Camera-side processing: model input preparation, grid tiling, the
//! night flame detector and the smoke verifier interface.

pub mod frame;
pub mod night;
pub mod synth;
pub mod verifier;

use thiserror::Error;

pub use frame::{preprocess, reassemble, split_grid, Frame, GridCell, GridSpec};
pub use night::{
    amdf_score, brd_mask, detect_night_fire, flicker_score, BackgroundModel, NightDetector,
    NightDetectorConfig, NightVerdict,
};
pub use verifier::{
    verify_smoke, Capture, MockScript, MockVerifier, RemoteVerifier, SmokeVerifier,
    VerifierConfig, VerifierError, VerifierVerdict,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VisionError {
    #[error("frame {width}x{height} is smaller than {min}x{min}")]
    TooSmall { width: usize, height: usize, min: usize },
    #[error("unsupported channel count {0}")]
    Channels(usize),
    #[error("pixel buffer has {got} bytes, expected {expected}")]
    BufferSize { expected: usize, got: usize },
    #[error("frame {width}x{height} cannot hold a {}x{} grid", grid.cols, grid.rows)]
    GridTooFine { width: usize, height: usize, grid: GridSpec },
    #[error("frames in a window must share one size")]
    MixedSizes,
    #[error("empty frame window")]
    EmptyWindow,
    #[error("window of {len} frames is shorter than the required {required}")]
    WindowTooShort { len: usize, required: usize },
    #[error("series of {len} samples is too short for lag {lag}")]
    SeriesTooShort { len: usize, lag: usize },
    #[error("vision config: {0}")]
    Config(String),
}
