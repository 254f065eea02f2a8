//! Simulated sensor nodes and the environment driving them.
//!
//! Every random draw is taken from a generator keyed on
//! `(scenario seed, node, t_ms)`, so a reading depends only on the seed,
//! the node, the sample time and the fire/rain state at that time.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lpwan::{ChannelModel, Payload, TelemetryMessage};
use crate::sensor::{self, centi, NodeId, SensorReading, ADC_MAX};

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("node {0} is not placed in this scenario")]
    UnplacedNode(NodeId),
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("scenario line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("scenario: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodePlacement {
    pub id: NodeId,
    #[serde(default)]
    pub label: Option<String>,
    pub azimuth_deg: f64,
    pub distance_m: f64,
}

impl NodePlacement {
    pub fn label(&self) -> String {
        self.label
            .clone()
            .unwrap_or_else(|| sensor::default_label(self.id))
    }

    pub fn position(&self) -> (f64, f64) {
        polar_to_xy(self.azimuth_deg, self.distance_m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FireSource {
    pub id: u32,
    pub azimuth_deg: f64,
    pub distance_m: f64,
    pub intensity: f64,
}

impl FireSource {
    pub fn position(&self) -> (f64, f64) {
        polar_to_xy(self.azimuth_deg, self.distance_m)
    }
}

/// Gateway-centered coordinates; azimuth measured clockwise from north.
pub fn polar_to_xy(azimuth_deg: f64, distance_m: f64) -> (f64, f64) {
    let rad = azimuth_deg.to_radians();
    (distance_m * rad.sin(), distance_m * rad.cos())
}

pub fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioEvent {
    PlaceFire {
        fire: u32,
        azimuth_deg: f64,
        distance_m: f64,
        intensity: f64,
    },
    MoveFire {
        fire: u32,
        azimuth_deg: f64,
        distance_m: f64,
    },
    ExtinguishFire {
        fire: u32,
    },
    RainStart {
        node: NodeId,
    },
    RainStop {
        node: NodeId,
    },
}

impl ScenarioEvent {
    /// True for events that bring a fire to a (new) position.
    pub fn is_fire_stimulus(&self) -> bool {
        matches!(
            self,
            ScenarioEvent::PlaceFire { .. } | ScenarioEvent::MoveFire { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedEvent {
    pub t_ms: u64,
    #[serde(flatten)]
    pub event: ScenarioEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Baseline {
    pub mean: f64,
    pub sigma: f64,
}

impl Baseline {
    pub const fn new(mean: f64, sigma: f64) -> Self {
        Self { mean, sigma }
    }
}

impl Default for Baseline {
    fn default() -> Self {
        Self::new(0.0, 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvironmentModel {
    pub temperature_c: Baseline,
    pub humidity_pct: Baseline,
    pub pressure_hpa: Baseline,
    pub smoke_raw: Baseline,
    pub water_raw: Baseline,
    /// Water level reported while it rains.
    pub rain_water_raw: Baseline,
    pub rain_threshold_raw: u16,
    /// Smoke counts added per unit intensity at zero distance.
    pub smoke_gain: f64,
    /// Degrees added per unit intensity at zero distance.
    pub heat_gain_c: f64,
    /// Humidity points removed per unit intensity at zero distance.
    pub drying_gain_pct: f64,
    pub period_ms: u64,
}

impl Default for EnvironmentModel {
    fn default() -> Self {
        Self {
            temperature_c: Baseline::new(18.0, 1.0),
            humidity_pct: Baseline::new(55.0, 3.0),
            pressure_hpa: Baseline::new(650.0, 0.5),
            smoke_raw: Baseline::new(150.0, 20.0),
            water_raw: Baseline::new(20.0, 5.0),
            rain_water_raw: Baseline::new(3000.0, 200.0),
            rain_threshold_raw: 2000,
            smoke_gain: 4000.0,
            heat_gain_c: 30.0,
            drying_gain_pct: 40.0,
            period_ms: 1000,
        }
    }
}

impl EnvironmentModel {
    pub fn noiseless(&self) -> Self {
        let mut env = self.clone();
        for b in [
            &mut env.temperature_c,
            &mut env.humidity_pct,
            &mut env.pressure_hpa,
            &mut env.smoke_raw,
            &mut env.water_raw,
            &mut env.rain_water_raw,
        ] {
            b.sigma = 0.0;
        }
        env
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for (name, b) in [
            ("temperature_c", &self.temperature_c),
            ("humidity_pct", &self.humidity_pct),
            ("pressure_hpa", &self.pressure_hpa),
            ("smoke_raw", &self.smoke_raw),
            ("water_raw", &self.water_raw),
            ("rain_water_raw", &self.rain_water_raw),
        ] {
            if !(b.sigma >= 0.0) {
                return Err(SimError::Config(format!("{name}.sigma must be >= 0")));
            }
        }
        if self.period_ms == 0 {
            return Err(SimError::Config("period_ms must be > 0".into()));
        }
        if self.smoke_gain < 0.0 || self.heat_gain_c < 0.0 || self.drying_gain_pct < 0.0 {
            return Err(SimError::Config("coupling gains must be >= 0".into()));
        }
        Ok(())
    }

    /// Total `intensity / (1 + d^2)` exposure of a node to all fires.
    pub fn exposure(&self, node_xy: (f64, f64), fires: &[FireSource]) -> f64 {
        fires
            .iter()
            .map(|f| {
                let d = distance(node_xy, f.position());
                f.intensity / (1.0 + d * d)
            })
            .sum()
    }
}

/// Fire and rain state at a point in scenario time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct World {
    pub fires: BTreeMap<u32, FireSource>,
    pub raining: BTreeSet<NodeId>,
}

impl World {
    pub fn apply(&mut self, event: &ScenarioEvent) {
        match *event {
            ScenarioEvent::PlaceFire {
                fire,
                azimuth_deg,
                distance_m,
                intensity,
            } => {
                self.fires.insert(
                    fire,
                    FireSource {
                        id: fire,
                        azimuth_deg,
                        distance_m,
                        intensity,
                    },
                );
            }
            ScenarioEvent::MoveFire {
                fire,
                azimuth_deg,
                distance_m,
            } => {
                if let Some(f) = self.fires.get_mut(&fire) {
                    f.azimuth_deg = azimuth_deg;
                    f.distance_m = distance_m;
                }
            }
            ScenarioEvent::ExtinguishFire { fire } => {
                self.fires.remove(&fire);
            }
            ScenarioEvent::RainStart { node } => {
                self.raining.insert(node);
            }
            ScenarioEvent::RainStop { node } => {
                self.raining.remove(&node);
            }
        }
    }

    pub fn fire_list(&self) -> Vec<FireSource> {
        self.fires.values().cloned().collect()
    }
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for one `(seed, stream, a, b)` coordinate.
pub fn keyed_rng(seed: u64, stream: u64, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(mix(seed ^ stream) ^ a) ^ b))
}

pub(crate) const STREAM_READING: u64 = 0x5EAD;
pub(crate) const STREAM_CHANNEL: u64 = 0xC0A1;

fn draw<R: Rng + ?Sized>(b: &Baseline, rng: &mut R) -> f64 {
    // Always consume one variate so streams stay aligned across configs.
    let z: f64 = Normal::new(0.0, 1.0).unwrap().sample(rng);
    b.mean + b.sigma * z
}

fn adc(x: f64) -> u16 {
    x.round().clamp(0.0, ADC_MAX as f64) as u16
}

pub fn sample_reading<R: Rng + ?Sized>(
    placement: &NodePlacement,
    t_ms: u64,
    env: &EnvironmentModel,
    fires: &[FireSource],
    rng: &mut R,
) -> SensorReading {
    let exposure = env.exposure(placement.position(), fires);
    let temp = draw(&env.temperature_c, rng) + env.heat_gain_c * exposure;
    let hum = draw(&env.humidity_pct, rng) - env.drying_gain_pct * exposure;
    let pressure = draw(&env.pressure_hpa, rng);
    let smoke = draw(&env.smoke_raw, rng) + env.smoke_gain * exposure;
    let water = draw(&env.water_raw, rng);
    SensorReading {
        node: placement.id,
        timestamp_ms: t_ms,
        temperature_c: centi(temp.clamp(sensor::TEMP_RANGE_C.0, sensor::TEMP_RANGE_C.1)),
        humidity_pct: centi(hum.clamp(0.0, 100.0)),
        pressure_hpa: centi(pressure.clamp(
            sensor::PRESSURE_RANGE_HPA.0,
            sensor::PRESSURE_RANGE_HPA.1,
        )),
        smoke_raw: adc(smoke),
        // Dry readings stay below the rain split.
        water_raw: adc(water).min(env.rain_threshold_raw),
    }
}

/// Per-node sender state: placement and the outgoing sequence counter.
#[derive(Debug, Clone)]
pub struct SimNode {
    pub placement: NodePlacement,
    next_seq: u64,
}

impl SimNode {
    pub fn new(placement: NodePlacement) -> Self {
        Self {
            placement,
            next_seq: 0,
        }
    }

    /// One sampling period: a full reading, or a rain heartbeat while it rains.
    pub fn tick(
        &mut self,
        t_ms: u64,
        env: &EnvironmentModel,
        world: &World,
        seed: u64,
    ) -> TelemetryMessage {
        let seq = self.next_seq;
        self.next_seq += 1;
        node_tick(&self.placement, seq, t_ms, env, world, seed)
    }
}

pub fn node_tick(
    placement: &NodePlacement,
    seq: u64,
    t_ms: u64,
    env: &EnvironmentModel,
    world: &World,
    seed: u64,
) -> TelemetryMessage {
    let mut rng = keyed_rng(seed, STREAM_READING, placement.id.0 as u64, t_ms);
    let payload = if world.raining.contains(&placement.id) {
        let wet = draw(&env.rain_water_raw, &mut rng);
        let water_raw = adc(wet).max(env.rain_threshold_raw.saturating_add(1)).min(ADC_MAX);
        Payload::RainHeartbeat {
            node: placement.id,
            timestamp_ms: t_ms,
            water_raw,
        }
    } else {
        Payload::Full(sample_reading(placement, t_ms, env, &world.fire_list(), &mut rng))
    };
    TelemetryMessage { seq, payload }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioScript {
    pub scenario_version: u32,
    pub seed: u64,
    pub duration_ms: u64,
    #[serde(default)]
    pub environment: EnvironmentModel,
    #[serde(default)]
    pub channel: ChannelModel,
    pub nodes: Vec<NodePlacement>,
    #[serde(default)]
    pub events: Vec<TimedEvent>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScript {
    scenario_version: u32,
    seed: u64,
    duration_ms: u64,
    #[serde(default)]
    environment: EnvironmentModel,
    #[serde(default)]
    channel: ChannelModel,
    nodes: Vec<toml::Spanned<NodePlacement>>,
    #[serde(default)]
    events: Vec<toml::Spanned<TimedEvent>>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl ScenarioScript {
    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        let raw: RawScript = toml::from_str(text).map_err(|e| SimError::Parse(e.to_string()))?;
        let node_lines: Vec<usize> = raw.nodes.iter().map(|n| line_of(text, n.span().start)).collect();
        let event_lines: Vec<usize> = raw.events.iter().map(|e| line_of(text, e.span().start)).collect();
        let script = ScenarioScript {
            scenario_version: raw.scenario_version,
            seed: raw.seed,
            duration_ms: raw.duration_ms,
            environment: raw.environment,
            channel: raw.channel,
            nodes: raw.nodes.into_iter().map(|n| n.into_inner()).collect(),
            events: raw.events.into_iter().map(|e| e.into_inner()).collect(),
        };
        script.validate_with_lines(&node_lines, &event_lines)?;
        Ok(script)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.validate_with_lines(&[], &[])
    }

    fn validate_with_lines(&self, node_lines: &[usize], event_lines: &[usize]) -> Result<(), SimError> {
        let at = |lines: &[usize], i: usize| lines.get(i).copied().unwrap_or(0);
        if self.scenario_version != SCENARIO_VERSION {
            return Err(SimError::Invalid {
                line: 1,
                message: format!("unsupported scenario_version {}", self.scenario_version),
            });
        }
        self.environment.validate()?;
        self.channel
            .validate()
            .map_err(|e| SimError::Config(e.to_string()))?;
        if self.nodes.is_empty() {
            return Err(SimError::Config("at least one node is required".into()));
        }
        let mut ids = BTreeSet::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let bad = if !ids.insert(n.id) {
                Some(format!("duplicate node id {}", n.id))
            } else if !(0.0..360.0).contains(&n.azimuth_deg) {
                Some(format!("node {} azimuth must be in [0, 360)", n.id))
            } else if !(n.distance_m > 0.0) {
                Some(format!("node {} distance must be > 0", n.id))
            } else {
                None
            };
            if let Some(message) = bad {
                return Err(SimError::Invalid {
                    line: at(node_lines, i),
                    message,
                });
            }
        }
        if ids.iter().enumerate().any(|(i, id)| id.index() != i) {
            return Err(SimError::Config("node ids must be 0..node_count".into()));
        }
        let mut last_t = 0;
        let mut fires = BTreeSet::new();
        for (i, ev) in self.events.iter().enumerate() {
            let fail = |message: String| SimError::Invalid {
                line: at(event_lines, i),
                message,
            };
            if ev.t_ms < last_t {
                return Err(fail(format!("event at t_ms={} is out of order", ev.t_ms)));
            }
            last_t = ev.t_ms;
            match &ev.event {
                ScenarioEvent::PlaceFire {
                    fire, intensity, distance_m, ..
                } => {
                    if !(*intensity >= 0.0) || !(*distance_m >= 0.0) {
                        return Err(fail(format!("fire {fire} needs intensity >= 0 and distance >= 0")));
                    }
                    fires.insert(*fire);
                }
                ScenarioEvent::MoveFire { fire, distance_m, .. } => {
                    if !fires.contains(fire) {
                        return Err(fail(format!("fire {fire} moved before it was placed")));
                    }
                    if !(*distance_m >= 0.0) {
                        return Err(fail(format!("fire {fire} distance must be >= 0")));
                    }
                }
                ScenarioEvent::ExtinguishFire { fire } => {
                    if !fires.remove(fire) {
                        return Err(fail(format!("fire {fire} extinguished but not burning")));
                    }
                }
                ScenarioEvent::RainStart { node } | ScenarioEvent::RainStop { node } => {
                    if !ids.contains(node) {
                        return Err(fail(format!("unknown node {node}")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn placement(&self, node: NodeId) -> Result<&NodePlacement, SimError> {
        self.nodes
            .iter()
            .find(|n| n.id == node)
            .ok_or(SimError::UnplacedNode(node))
    }

    /// World state after applying every event with `t_ms <= t`.
    pub fn world_at(&self, t_ms: u64) -> World {
        let mut world = World::default();
        for ev in self.events.iter().take_while(|e| e.t_ms <= t_ms) {
            world.apply(&ev.event);
        }
        world
    }

    /// All node messages up to `duration_ms`, in emission order.
    pub fn telemetry_stream(&self) -> Vec<TelemetryMessage> {
        let mut nodes: Vec<SimNode> = self.nodes.iter().cloned().map(SimNode::new).collect();
        let period = self.environment.period_ms;
        let mut out = Vec::new();
        let mut t = 0;
        while t <= self.duration_ms {
            let world = self.world_at(t);
            for n in &mut nodes {
                out.push(n.tick(t, &self.environment, &world, self.seed));
            }
            t += period;
        }
        out
    }
}

/// Reading for a placed node, failing for ids unknown to the script.
pub fn sample_scripted(
    script: &ScenarioScript,
    node: NodeId,
    t_ms: u64,
) -> Result<SensorReading, SimError> {
    let placement = script.placement(node)?;
    let world = script.world_at(t_ms);
    let mut rng = keyed_rng(script.seed, STREAM_READING, node.0 as u64, t_ms);
    Ok(sample_reading(
        placement,
        t_ms,
        &script.environment,
        &world.fire_list(),
        &mut rng,
    ))
}
