//! Telemetry wire format and a lossy, unacknowledged uplink channel.
//!
//! Messages are canonical JSON objects with a fixed key order so that
//! encodings can be compared byte for byte. See `docs/wire-format.md`.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::sensor::{NodeId, SensorReading, ADC_MAX};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    Full(SensorReading),
    RainHeartbeat {
        node: NodeId,
        timestamp_ms: u64,
        water_raw: u16,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryMessage {
    pub seq: u64,
    pub payload: Payload,
}

impl TelemetryMessage {
    pub fn node_id(&self) -> NodeId {
        match &self.payload {
            Payload::Full(r) => r.node,
            Payload::RainHeartbeat { node, .. } => *node,
        }
    }

    pub fn timestamp_ms(&self) -> u64 {
        match &self.payload {
            Payload::Full(r) => r.timestamp_ms,
            Payload::RainHeartbeat { timestamp_ms, .. } => *timestamp_ms,
        }
    }

    pub fn is_rain(&self) -> bool {
        matches!(self.payload, Payload::RainHeartbeat { .. })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WireError {
    #[error("malformed telemetry JSON: {0}")]
    Malformed(String),
    #[error("telemetry must be a JSON object")]
    NotAnObject,
    #[error("missing field \"{0}\"")]
    Missing(&'static str),
    #[error("unknown field \"{0}\"")]
    UnknownField(String),
    #[error("field \"{0}\" has the wrong type")]
    WrongType(String),
    #[error("field \"{field}\" out of range: {detail}")]
    Range { field: String, detail: String },
    #[error("unsupported wire version {0}")]
    Version(u64),
}

impl WireError {
    pub fn field(&self) -> Option<&str> {
        match self {
            WireError::Missing(f) => Some(f),
            WireError::UnknownField(f) | WireError::WrongType(f) => Some(f),
            WireError::Range { field, .. } => Some(field),
            WireError::Version(_) => Some("v"),
            WireError::Malformed(_) | WireError::NotAnObject => None,
        }
    }
}

/// Canonical encoding: `node_id, seq, ts` then either the five sensor
/// fields or `rain, water_raw`.
pub fn encode(msg: &TelemetryMessage) -> Vec<u8> {
    let mut out = String::with_capacity(128);
    let _ = write!(
        out,
        "{{\"node_id\":{},\"seq\":{},\"ts\":{}",
        msg.node_id().0,
        msg.seq,
        msg.timestamp_ms()
    );
    match &msg.payload {
        Payload::Full(r) => {
            let _ = write!(
                out,
                ",\"temp_c\":{:.2},\"humidity_pct\":{:.2},\"pressure_hpa\":{:.2},\"smoke_raw\":{},\"water_raw\":{}}}",
                r.temperature_c, r.humidity_pct, r.pressure_hpa, r.smoke_raw, r.water_raw
            );
        }
        Payload::RainHeartbeat { water_raw, .. } => {
            let _ = write!(out, ",\"rain\":true,\"water_raw\":{}}}", water_raw);
        }
    }
    out.into_bytes()
}

const FULL_KEYS: [&str; 5] = ["temp_c", "humidity_pct", "pressure_hpa", "smoke_raw", "water_raw"];

fn take<'a>(obj: &'a Map<String, Value>, key: &'static str) -> Result<&'a Value, WireError> {
    obj.get(key).ok_or(WireError::Missing(key))
}

fn uint(obj: &Map<String, Value>, key: &'static str, max: u64) -> Result<u64, WireError> {
    let v = take(obj, key)?;
    let n = match v.as_u64() {
        Some(n) => n,
        None if v.is_number() => {
            return Err(WireError::Range {
                field: key.into(),
                detail: format!("{v} is not a non-negative integer"),
            })
        }
        None => return Err(WireError::WrongType(key.into())),
    };
    if n > max {
        return Err(WireError::Range {
            field: key.into(),
            detail: format!("{n} exceeds {max}"),
        });
    }
    Ok(n)
}

fn real(obj: &Map<String, Value>, key: &'static str, (min, max): (f64, f64)) -> Result<f64, WireError> {
    let x = take(obj, key)?
        .as_f64()
        .ok_or_else(|| WireError::WrongType(key.into()))?;
    if !(x >= min && x <= max) {
        return Err(WireError::Range {
            field: key.into(),
            detail: format!("{x} not in [{min}, {max}]"),
        });
    }
    Ok(x)
}

pub fn decode(bytes: &[u8]) -> Result<TelemetryMessage, WireError> {
    let value: Value =
        serde_json::from_slice(bytes).map_err(|e| WireError::Malformed(e.to_string()))?;
    let obj = value.as_object().ok_or(WireError::NotAnObject)?;

    if let Some(v) = obj.get("v") {
        match v.as_u64() {
            Some(1) => {}
            Some(n) => return Err(WireError::Version(n)),
            None => return Err(WireError::WrongType("v".into())),
        }
    }

    let rain = match obj.get("rain") {
        None => false,
        Some(Value::Bool(b)) => *b,
        Some(_) => return Err(WireError::WrongType("rain".into())),
    };
    let allowed: &[&str] = if rain {
        &["v", "node_id", "seq", "ts", "rain", "water_raw"]
    } else {
        &[
            "v", "node_id", "seq", "ts", "rain", "temp_c", "humidity_pct", "pressure_hpa",
            "smoke_raw", "water_raw",
        ]
    };
    if let Some(key) = obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(WireError::UnknownField(key.clone()));
    }

    let node = NodeId(uint(obj, "node_id", u16::MAX as u64)? as u16);
    let seq = uint(obj, "seq", u64::MAX)?;
    let timestamp_ms = uint(obj, "ts", u64::MAX)?;
    let water_raw = uint(obj, "water_raw", ADC_MAX as u64)? as u16;

    let payload = if rain {
        Payload::RainHeartbeat {
            node,
            timestamp_ms,
            water_raw,
        }
    } else {
        for key in FULL_KEYS {
            take(obj, key)?;
        }
        Payload::Full(SensorReading {
            node,
            timestamp_ms,
            temperature_c: real(obj, "temp_c", crate::sensor::TEMP_RANGE_C)?,
            humidity_pct: real(obj, "humidity_pct", crate::sensor::HUMIDITY_RANGE_PCT)?,
            pressure_hpa: real(obj, "pressure_hpa", crate::sensor::PRESSURE_RANGE_HPA)?,
            smoke_raw: uint(obj, "smoke_raw", ADC_MAX as u64)? as u16,
            water_raw,
        })
    };
    Ok(TelemetryMessage { seq, payload })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelModel {
    pub loss_probability: f64,
    pub duplicate_probability: f64,
    pub latency_min_ms: u64,
    pub latency_max_ms: u64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        Self {
            loss_probability: 0.0,
            duplicate_probability: 0.0,
            latency_min_ms: 40,
            latency_max_ms: 120,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("{0} must be within [0, 1]")]
    Probability(&'static str),
    #[error("latency_min_ms exceeds latency_max_ms")]
    LatencyBounds,
}

impl ChannelModel {
    pub fn perfect(latency_ms: u64) -> Self {
        Self {
            loss_probability: 0.0,
            duplicate_probability: 0.0,
            latency_min_ms: latency_ms,
            latency_max_ms: latency_ms,
        }
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(0.0..=1.0).contains(&self.loss_probability) {
            return Err(ChannelError::Probability("loss_probability"));
        }
        if !(0.0..=1.0).contains(&self.duplicate_probability) {
            return Err(ChannelError::Probability("duplicate_probability"));
        }
        if self.latency_min_ms > self.latency_max_ms {
            return Err(ChannelError::LatencyBounds);
        }
        Ok(())
    }

    fn latency<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        rng.random_range(self.latency_min_ms..=self.latency_max_ms)
    }
}

/// Zero, one or two (duplicated) deliveries of the encoded message, each
/// with an absolute delivery time.
pub fn transmit<R: Rng + ?Sized>(
    msg: &TelemetryMessage,
    sent_at_ms: u64,
    channel: &ChannelModel,
    rng: &mut R,
) -> Vec<(u64, Vec<u8>)> {
    // Draw every variate up front so the stream consumed per message is fixed.
    let lost = rng.random::<f64>() < channel.loss_probability;
    let duplicated = rng.random::<f64>() < channel.duplicate_probability;
    let first = channel.latency(rng);
    let second = channel.latency(rng);
    if lost {
        return Vec::new();
    }
    let bytes = encode(msg);
    let mut out = vec![(sent_at_ms + first, bytes.clone())];
    if duplicated {
        out.push((sent_at_ms + second, bytes));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn full() -> TelemetryMessage {
        TelemetryMessage {
            seq: 7,
            payload: Payload::Full(SensorReading {
                node: NodeId(0),
                timestamp_ms: 12000,
                temperature_c: 21.5,
                humidity_pct: 40.0,
                pressure_hpa: 650.0,
                smoke_raw: 120,
                water_raw: 10,
            }),
        }
    }

    fn rain() -> TelemetryMessage {
        TelemetryMessage {
            seq: 3,
            payload: Payload::RainHeartbeat {
                node: NodeId(2),
                timestamp_ms: 5000,
                water_raw: 3000,
            },
        }
    }

    #[test]
    fn canonical_bytes() {
        assert_eq!(
            String::from_utf8(encode(&full())).unwrap(),
            r#"{"node_id":0,"seq":7,"ts":12000,"temp_c":21.50,"humidity_pct":40.00,"pressure_hpa":650.00,"smoke_raw":120,"water_raw":10}"#
        );
        assert_eq!(
            String::from_utf8(encode(&rain())).unwrap(),
            r#"{"node_id":2,"seq":3,"ts":5000,"rain":true,"water_raw":3000}"#
        );
        assert_eq!(decode(&encode(&full())).unwrap(), full());
        assert_eq!(decode(&encode(&rain())).unwrap(), rain());
    }

    #[test]
    fn decode_errors_name_the_field() {
        let bad = br#"{"node_id":0,"seq":7,"ts":12000,"temp_c":21.50,"humidity_pct":40.00,"pressure_hpa":650.00,"smoke_raw":9999,"water_raw":10}"#;
        assert_eq!(decode(bad).unwrap_err().field(), Some("smoke_raw"));

        let bytes = encode(&full());
        let truncated = &bytes[..bytes.len() - 9];
        assert!(matches!(decode(truncated), Err(WireError::Malformed(_))));

        let extra = br#"{"node_id":2,"seq":3,"ts":5000,"rain":true,"water_raw":3000,"temp_c":1.0}"#;
        assert_eq!(decode(extra).unwrap_err(), WireError::UnknownField("temp_c".into()));

        let missing = br#"{"node_id":2,"seq":3,"ts":5000,"temp_c":1.0}"#;
        assert!(matches!(decode(missing), Err(WireError::Missing(_))));

        let hot = br#"{"node_id":0,"seq":1,"ts":0,"temp_c":99.00,"humidity_pct":40.00,"pressure_hpa":650.00,"smoke_raw":1,"water_raw":1}"#;
        assert_eq!(decode(hot).unwrap_err().field(), Some("temp_c"));

        assert!(matches!(decode(b"[1,2]"), Err(WireError::NotAnObject)));
    }

    #[test]
    fn version_field() {
        let v1 = br#"{"v":1,"node_id":2,"seq":3,"ts":5000,"rain":true,"water_raw":3000}"#;
        assert_eq!(decode(v1).unwrap(), rain());
        let v2 = br#"{"v":2,"node_id":2,"seq":3,"ts":5000,"rain":true,"water_raw":3000}"#;
        assert_eq!(decode(v2).unwrap_err(), WireError::Version(2));
    }

    #[test]
    fn total_loss_delivers_nothing() {
        let ch = ChannelModel {
            loss_probability: 1.0,
            ..ChannelModel::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert!(transmit(&full(), 0, &ch, &mut rng).is_empty());
        }
    }

    #[test]
    fn perfect_channel_fixed_latency() {
        let ch = ChannelModel::perfect(50);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = transmit(&full(), 1000, &ch, &mut rng);
        assert_eq!(out, vec![(1050, encode(&full()))]);
    }

    #[test]
    fn duplicates_are_identical_bytes() {
        let ch = ChannelModel {
            duplicate_probability: 1.0,
            ..ChannelModel::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = transmit(&full(), 0, &ch, &mut rng);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].1, out[1].1);
    }

    #[test]
    fn channel_validation() {
        let mut ch = ChannelModel::default();
        ch.loss_probability = 1.5;
        assert!(ch.validate().is_err());
        let ch = ChannelModel {
            latency_min_ms: 10,
            latency_max_ms: 5,
            ..ChannelModel::default()
        };
        assert_eq!(ch.validate(), Err(ChannelError::LatencyBounds));
    }

    pub(crate) fn arb_message() -> impl Strategy<Value = TelemetryMessage> {
        let full = (
            any::<u16>(),
            any::<u64>(),
            any::<u64>(),
            -4000i64..=8500,
            0i64..=10000,
            30000i64..=110000,
            0u16..=4095,
            0u16..=4095,
        )
            .prop_map(|(node, seq, ts, t, h, p, s, w)| TelemetryMessage {
                seq,
                payload: Payload::Full(SensorReading {
                    node: NodeId(node),
                    timestamp_ms: ts,
                    temperature_c: t as f64 / 100.0,
                    humidity_pct: h as f64 / 100.0,
                    pressure_hpa: p as f64 / 100.0,
                    smoke_raw: s,
                    water_raw: w,
                }),
            });
        let rain = (any::<u16>(), any::<u64>(), any::<u64>(), 0u16..=4095).prop_map(
            |(node, seq, ts, w)| TelemetryMessage {
                seq,
                payload: Payload::RainHeartbeat {
                    node: NodeId(node),
                    timestamp_ms: ts,
                    water_raw: w,
                },
            },
        );
        prop_oneof![full, rain]
    }

    proptest! {
        #[test]
        fn round_trip(msg in arb_message()) {
            let bytes = encode(&msg);
            let back = decode(&bytes).unwrap();
            prop_assert_eq!(&back, &msg);
            prop_assert_eq!(encode(&back), bytes);
        }
    }
}
