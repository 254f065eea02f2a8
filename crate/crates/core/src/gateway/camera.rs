use serde::{Deserialize, Serialize};

use crate::sim::FireSource;
use crate::vision::GridSpec;

pub fn normalize_deg(deg: f64) -> f64 {
    let d = deg.rem_euclid(360.0);
    if d >= 360.0 {
        0.0
    } else {
        d
    }
}

/// Signed shortest turn from `from` to `to`, in (-180, 180].
pub fn shortest_turn_deg(from: f64, to: f64) -> f64 {
    let d = (normalize_deg(to) - normalize_deg(from)).rem_euclid(360.0);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub speed_deg_per_s: f64,
    pub initial_azimuth_deg: f64,
    /// Horizontal field of view.
    pub fov_deg: f64,
    /// Heading to return to when nothing warrants a look.
    pub home_azimuth_deg: Option<f64>,
    /// Grid row the smoke column of a visible fire falls into.
    pub smoke_row: usize,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            speed_deg_per_s: 60.0,
            initial_azimuth_deg: 0.0,
            fov_deg: 62.2,
            home_azimuth_deg: None,
            smoke_row: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    azimuth_deg: f64,
    pub speed_deg_per_s: f64,
    pub fov_deg: f64,
    pub smoke_row: usize,
}

impl CameraModel {
    pub fn new(config: &CameraConfig) -> Self {
        assert!(config.speed_deg_per_s > 0.0, "camera speed must be positive");
        Self {
            azimuth_deg: normalize_deg(config.initial_azimuth_deg),
            speed_deg_per_s: config.speed_deg_per_s,
            fov_deg: config.fov_deg,
            smoke_row: config.smoke_row,
        }
    }

    pub fn azimuth_deg(&self) -> f64 {
        self.azimuth_deg
    }

    /// Time to turn to `target`, rounded to the millisecond.
    pub fn rotation_ms(&self, target_deg: f64) -> u64 {
        let travel = shortest_turn_deg(self.azimuth_deg, target_deg).abs();
        (travel / self.speed_deg_per_s * 1000.0).round() as u64
    }

    /// Start turning at `now_ms`; the heading is updated and the completion time returned.
    pub fn orient(&mut self, target_deg: f64, now_ms: u64) -> u64 {
        let done = now_ms + self.rotation_ms(target_deg);
        self.azimuth_deg = normalize_deg(target_deg);
        done
    }

    /// Grid cells holding smoke from fires inside the field of view.
    pub fn visible_smoke(&self, fires: &[FireSource], grid: GridSpec) -> Vec<(usize, usize)> {
        let half = self.fov_deg / 2.0;
        let mut cells: Vec<(usize, usize)> = fires
            .iter()
            .filter(|f| f.intensity > 0.0)
            .filter_map(|f| {
                let off = shortest_turn_deg(self.azimuth_deg, f.azimuth_deg);
                if off.abs() > half {
                    return None;
                }
                let col = (((off + half) / self.fov_deg) * grid.cols as f64).floor() as usize;
                Some((self.smoke_row.min(grid.rows - 1), col.min(grid.cols - 1)))
            })
            .collect();
        cells.sort_unstable();
        cells.dedup();
        cells
    }
}
