//! Night-time flame detector.
//!
//! A candidate region must pass four gates over a short window of frames:
//! it is bright (gray >= `brd_threshold` somewhere in the window), it
//! differs from a running-average background, its mean intensity flickers
//! (normalized AMDF above `amdf_threshold`), and its average color is
//! red over green over blue.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::frame::Frame;
use super::VisionError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NightDetectorConfig {
    pub brd_threshold: u8,
    pub amdf_threshold: f64,
    pub amdf_lags: Vec<usize>,
    pub background_learning_rate: f64,
    /// Pixel is foreground when `|gray - background|` exceeds this.
    pub foreground_delta: f64,
    /// Share of a region's pixels that must be foreground at least once.
    pub foreground_fraction: f64,
    pub min_region_px: usize,
    pub red_over_green: f64,
    pub green_over_blue: f64,
    pub window_len: usize,
}

impl Default for NightDetectorConfig {
    fn default() -> Self {
        Self {
            brd_threshold: 180,
            amdf_threshold: 0.2,
            amdf_lags: vec![1, 2, 3],
            background_learning_rate: 0.05,
            foreground_delta: 25.0,
            foreground_fraction: 0.5,
            min_region_px: 16,
            red_over_green: 10.0,
            green_over_blue: 10.0,
            window_len: 16,
        }
    }
}

impl NightDetectorConfig {
    pub fn validate(&self) -> Result<(), VisionError> {
        let bad = |m: &str| Err(VisionError::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.amdf_threshold) {
            return bad("amdf_threshold must be within [0, 1]");
        }
        if !(self.background_learning_rate > 0.0 && self.background_learning_rate <= 1.0) {
            return bad("background_learning_rate must be within (0, 1]");
        }
        if self.amdf_lags.is_empty() || self.amdf_lags.contains(&0) {
            return bad("amdf_lags must be non-empty and positive");
        }
        if self.window_len <= *self.amdf_lags.iter().max().unwrap() {
            return bad("window_len must exceed the largest AMDF lag");
        }
        if !(0.0..=1.0).contains(&self.foreground_fraction) {
            return bad("foreground_fraction must be within [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: usize,
    pub y0: usize,
    /// Inclusive.
    pub x1: usize,
    pub y1: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub area: usize,
    pub bbox: BoundingBox,
    pub pixels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BrightMask {
    pub width: usize,
    pub height: usize,
    pub mask: Vec<bool>,
    pub regions: Vec<Region>,
}

impl BrightMask {
    pub fn lit_pixels(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

fn require_gray(frame: &Frame) -> Result<(), VisionError> {
    if frame.channels != 1 {
        return Err(VisionError::Channels(frame.channels));
    }
    Ok(())
}

/// Pixels `>= threshold` and their 4-connected components of at least
/// `min_region_px` pixels, in raster order of first pixel.
pub fn brd_mask(gray: &Frame, threshold: u8, min_region_px: usize) -> Result<BrightMask, VisionError> {
    require_gray(gray)?;
    let (w, h) = (gray.width, gray.height);
    let mask: Vec<bool> = gray.data.iter().map(|&v| v >= threshold).collect();
    let mut seen = vec![false; w * h];
    let mut regions = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut pixels = Vec::new();
        let mut bbox = BoundingBox {
            x0: usize::MAX,
            y0: usize::MAX,
            x1: 0,
            y1: 0,
        };
        while let Some(p) = stack.pop() {
            pixels.push(p);
            let (x, y) = (p % w, p / w);
            bbox.x0 = bbox.x0.min(x);
            bbox.y0 = bbox.y0.min(y);
            bbox.x1 = bbox.x1.max(x);
            bbox.y1 = bbox.y1.max(y);
            let mut visit = |q: usize| {
                if mask[q] && !seen[q] {
                    seen[q] = true;
                    stack.push(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
        }
        if pixels.len() >= min_region_px {
            pixels.sort_unstable();
            regions.push(Region {
                area: pixels.len(),
                bbox,
                pixels,
            });
        }
    }
    Ok(BrightMask {
        width: w,
        height: h,
        mask,
        regions,
    })
}

/// Mean absolute lag-`lag` difference, divided by 255.
pub fn amdf_score(series: &[f64], lag: usize) -> Result<f64, VisionError> {
    if lag == 0 || series.len() <= lag {
        return Err(VisionError::SeriesTooShort {
            len: series.len(),
            lag,
        });
    }
    let n = series.len() - lag;
    let total: f64 = series.windows(lag + 1).map(|w| (w[0] - w[lag]).abs()).sum();
    Ok(total / n as f64 / 255.0)
}

/// Largest AMDF score over the given lags.
pub fn flicker_score(series: &[f64], lags: &[usize]) -> Result<f64, VisionError> {
    lags.iter()
        .map(|&lag| amdf_score(series, lag))
        .try_fold(0.0f64, |best, s| s.map(|s| best.max(s)))
}

/// Per-pixel exponential running average of gray intensity.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BackgroundModel {
    width: usize,
    height: usize,
    mean: Vec<f64>,
}

impl BackgroundModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_initialized(&self) -> bool {
        !self.mean.is_empty()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Foreground flags of `gray` against the current model, then learn it.
    pub fn observe(&mut self, gray: &Frame, delta: f64, rate: f64) -> Result<Vec<bool>, VisionError> {
        require_gray(gray)?;
        if !self.is_initialized() || self.width != gray.width || self.height != gray.height {
            self.width = gray.width;
            self.height = gray.height;
            self.mean = gray.data.iter().map(|&v| v as f64).collect();
        }
        let mut fg = Vec::with_capacity(self.mean.len());
        for (m, &v) in self.mean.iter_mut().zip(&gray.data) {
            let v = v as f64;
            fg.push((v - *m).abs() > delta);
            *m += rate * (v - *m);
        }
        Ok(fg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionReport {
    pub bbox: BoundingBox,
    pub area: usize,
    pub foreground_fraction: f64,
    pub flicker: f64,
    pub mean_rgb: [f64; 3],
    pub foreground: bool,
    pub flickering: bool,
    pub fire_colored: bool,
}

impl RegionReport {
    pub fn is_fire(&self) -> bool {
        self.foreground && self.flickering && self.fire_colored
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NightVerdict {
    pub fire: bool,
    pub regions: Vec<RegionReport>,
}

/// Run the detector over `window` (oldest first), updating `background`.
pub fn detect_night_fire(
    window: &[Frame],
    config: &NightDetectorConfig,
    background: &mut BackgroundModel,
) -> Result<NightVerdict, VisionError> {
    config.validate()?;
    if window.is_empty() {
        return Err(VisionError::EmptyWindow);
    }
    if window.len() < config.window_len {
        return Err(VisionError::WindowTooShort {
            len: window.len(),
            required: config.window_len,
        });
    }
    let (w, h, c) = (window[0].width, window[0].height, window[0].channels);
    if window.iter().any(|f| f.width != w || f.height != h || f.channels != c) {
        return Err(VisionError::MixedSizes);
    }
    let grays: Vec<Frame> = window.iter().map(Frame::to_gray).collect();

    let mut peak = grays[0].clone();
    for g in &grays[1..] {
        peak.data.iter_mut().zip(&g.data).for_each(|(p, v)| *p = (*p).max(*v));
    }
    let bright = brd_mask(&peak, config.brd_threshold, config.min_region_px)?;

    let mut ever_fg = vec![false; w * h];
    for g in &grays {
        let fg = background.observe(g, config.foreground_delta, config.background_learning_rate)?;
        ever_fg.iter_mut().zip(fg).for_each(|(e, f)| *e |= f);
    }

    let mut regions = Vec::with_capacity(bright.regions.len());
    for region in &bright.regions {
        let area = region.area as f64;
        let fg_share = region.pixels.iter().filter(|&&p| ever_fg[p]).count() as f64 / area;
        let series: Vec<f64> = grays
            .iter()
            .map(|g| region.pixels.iter().map(|&p| g.data[p] as f64).sum::<f64>() / area)
            .collect();
        let flicker = flicker_score(&series, &config.amdf_lags)?;

        let mut rgb = [0.0; 3];
        for f in window {
            for &p in &region.pixels {
                for (ch, acc) in rgb.iter_mut().enumerate() {
                    *acc += f.data[p * c + ch.min(c - 1)] as f64;
                }
            }
        }
        let samples = area * window.len() as f64;
        rgb.iter_mut().for_each(|v| *v /= samples);

        regions.push(RegionReport {
            bbox: region.bbox,
            area: region.area,
            foreground_fraction: fg_share,
            flicker,
            mean_rgb: rgb,
            foreground: fg_share >= config.foreground_fraction,
            flickering: flicker > config.amdf_threshold,
            fire_colored: rgb[0] >= rgb[1] + config.red_over_green
                && rgb[1] >= rgb[2] + config.green_over_blue,
        });
    }
    Ok(NightVerdict {
        fire: regions.iter().any(RegionReport::is_fire),
        regions,
    })
}

/// Sliding-window wrapper that feeds frames one at a time.
#[derive(Debug, Clone)]
pub struct NightDetector {
    config: NightDetectorConfig,
    background: BackgroundModel,
    window: VecDeque<Frame>,
}

impl NightDetector {
    pub fn new(config: NightDetectorConfig) -> Result<Self, VisionError> {
        config.validate()?;
        Ok(Self {
            config,
            background: BackgroundModel::new(),
            window: VecDeque::new(),
        })
    }

    /// Push one frame; returns a verdict each time a full window is buffered.
    pub fn push(&mut self, frame: Frame) -> Result<Option<NightVerdict>, VisionError> {
        self.window.push_back(frame);
        if self.window.len() < self.config.window_len {
            return Ok(None);
        }
        let frames: Vec<Frame> = self.window.drain(..).collect();
        detect_night_fire(&frames, &self.config, &mut self.background).map(Some)
    }
}
