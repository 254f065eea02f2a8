//! Telemetry domain types and the per-node risk signal.
//!
//! Each node reports temperature, humidity, pressure and two raw ADC
//! levels (smoke and water). Only smoke, temperature and humidity feed the
//! fused signal:
//!
//! ```text
//! signal = w_smoke * smoke_pct / 100 + w_temp * B_t + w_hum * B_h
//! ```
//!
//! where `B_t` / `B_h` are 0/1 indicators of the temperature and humidity
//! thresholds being crossed.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TEMP_RANGE_C: (f64, f64) = (-40.0, 85.0);
pub const HUMIDITY_RANGE_PCT: (f64, f64) = (0.0, 100.0);
pub const PRESSURE_RANGE_HPA: (f64, f64) = (300.0, 1100.0);
pub const ADC_MAX: u16 = 4095;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("{field} = {value} is outside [{min}, {max}]")]
    OutOfRange {
        field: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("cannot rank an empty list of sector signals")]
    NoSignals,
    #[error("negative fusion weight {0}")]
    NegativeWeight(&'static str),
}

impl DomainError {
    /// Name of the offending field, when the error is tied to one.
    pub fn field(&self) -> Option<&'static str> {
        match self {
            DomainError::OutOfRange { field, .. } => Some(field),
            DomainError::NegativeWeight(field) => Some(field),
            DomainError::NoSignals => None,
        }
    }
}

fn check_range(field: &'static str, value: f64, (min, max): (f64, f64)) -> Result<(), DomainError> {
    if value.is_finite() && value >= min && value <= max {
        Ok(())
    } else {
        Err(DomainError::OutOfRange {
            field,
            value,
            min,
            max,
        })
    }
}

/// Index of a sensor node within a deployment. Labels live on the placement.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct NodeId(pub u16);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Default label for a node index: 0 -> "A", 1 -> "B", ... 26 -> "AA".
pub fn default_label(id: NodeId) -> String {
    let mut n = id.0 as u32;
    let mut out = Vec::new();
    loop {
        out.push((b'A' + (n % 26) as u8) as char);
        if n < 26 {
            break;
        }
        n = n / 26 - 1;
    }
    out.iter().rev().collect()
}

/// One environmental sample. Fixed-point fields carry at most two decimals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorReading {
    pub node: NodeId,
    pub timestamp_ms: u64,
    pub temperature_c: f64,
    pub humidity_pct: f64,
    pub pressure_hpa: f64,
    pub smoke_raw: u16,
    pub water_raw: u16,
}

impl SensorReading {
    pub fn validate(&self) -> Result<(), DomainError> {
        check_range("temp_c", self.temperature_c, TEMP_RANGE_C)?;
        check_range("humidity_pct", self.humidity_pct, HUMIDITY_RANGE_PCT)?;
        check_range("pressure_hpa", self.pressure_hpa, PRESSURE_RANGE_HPA)?;
        check_range("smoke_raw", self.smoke_raw as f64, (0.0, ADC_MAX as f64))?;
        check_range("water_raw", self.water_raw as f64, (0.0, ADC_MAX as f64))?;
        Ok(())
    }
}

/// Round to the two-decimal grid used on the wire.
pub fn centi(value: f64) -> f64 {
    (value * 100.0).round() / 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionWeights {
    pub w_smoke: f64,
    pub w_temp: f64,
    pub w_hum: f64,
    /// `B_t` fires when temperature is strictly above this value.
    pub temp_threshold_c: f64,
    /// `B_h` fires when humidity is strictly below this value (dry air).
    pub humidity_threshold_pct: f64,
}

impl Default for FusionWeights {
    fn default() -> Self {
        Self {
            w_smoke: 0.6,
            w_temp: 0.3,
            w_hum: 0.05,
            temp_threshold_c: 35.0,
            humidity_threshold_pct: 30.0,
        }
    }
}

impl FusionWeights {
    pub fn validate(&self) -> Result<(), DomainError> {
        for (name, w) in [
            ("w_smoke", self.w_smoke),
            ("w_temp", self.w_temp),
            ("w_hum", self.w_hum),
        ] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(DomainError::NegativeWeight(name));
            }
        }
        Ok(())
    }

    pub fn max_signal(&self) -> f64 {
        self.w_smoke + self.w_temp + self.w_hum
    }

    /// Parse the `key = value` config format (TOML subset, see docs/config.md).
    pub fn from_toml_str(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorSignal {
    pub node: NodeId,
    pub smoke_pct: f64,
    pub temp_exceeded: bool,
    pub hum_exceeded: bool,
    pub signal: f64,
}

/// Linear map of the MQ2 ADC range onto 0-100.
pub fn smoke_pct_from_raw(raw: u16) -> Result<f64, DomainError> {
    check_range("smoke_raw", raw as f64, (0.0, ADC_MAX as f64))?;
    Ok(raw as f64 * 100.0 / ADC_MAX as f64)
}

pub fn fuse(smoke_pct: f64, temp_exceeded: bool, hum_exceeded: bool, weights: &FusionWeights) -> f64 {
    let b_t = if temp_exceeded { 1.0 } else { 0.0 };
    let b_h = if hum_exceeded { 1.0 } else { 0.0 };
    weights.w_smoke * (smoke_pct / 100.0) + weights.w_temp * b_t + weights.w_hum * b_h
}

pub fn compute_signal(
    reading: &SensorReading,
    weights: &FusionWeights,
) -> Result<SectorSignal, DomainError> {
    reading.validate()?;
    let smoke_pct = smoke_pct_from_raw(reading.smoke_raw)?;
    let temp_exceeded = reading.temperature_c > weights.temp_threshold_c;
    let hum_exceeded = reading.humidity_pct < weights.humidity_threshold_pct;
    Ok(SectorSignal {
        node: reading.node,
        smoke_pct,
        temp_exceeded,
        hum_exceeded,
        signal: fuse(smoke_pct, temp_exceeded, hum_exceeded, weights),
    })
}

/// Node with the strongest signal; ties go to the lowest node id.
pub fn rank_sectors(signals: &[SectorSignal]) -> Result<NodeId, DomainError> {
    signals
        .iter()
        .min_by(|a, b| {
            b.signal
                .total_cmp(&a.signal)
                .then_with(|| a.node.cmp(&b.node))
        })
        .map(|s| s.node)
        .ok_or(DomainError::NoSignals)
}
