use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::sensor::{
    centi, compute_signal, rank_sectors, FusionWeights, NodeId, SensorReading, ADC_MAX,
};

pub const FEATURES_PER_NODE: usize = 3;

/// `[smoke_pct/100, (temp+40)/125, humidity/100]` for each node, concatenated.
pub fn state_vector(readings: &[SensorReading]) -> Vec<f64> {
    readings
        .iter()
        .flat_map(|r| {
            [
                r.smoke_raw as f64 / ADC_MAX as f64,
                (r.temperature_c + 40.0) / 125.0,
                r.humidity_pct / 100.0,
            ]
        })
        .collect()
}

/// The node the fused signal ranks first.
pub fn oracle_choice(readings: &[SensorReading], weights: &FusionWeights) -> NodeId {
    let signals: Vec<_> = readings
        .iter()
        .map(|r| compute_signal(r, weights).expect("generated readings are in range"))
        .collect();
    rank_sectors(&signals).expect("at least one node")
}

/// Sector-selection environment: every step one node is "hot" (smoky,
/// warm, dry) and the rest are calm. Choosing the signal winner pays
/// `reward_correct`, anything else `reward_incorrect`.
#[derive(Debug, Clone)]
pub struct SectorEnv {
    node_count: usize,
    steps_per_episode: usize,
    weights: FusionWeights,
    reward_correct: f64,
    reward_incorrect: f64,
    rng: ChaCha8Rng,
    step: usize,
    readings: Vec<SensorReading>,
}

impl SectorEnv {
    pub fn new(node_count: usize, steps_per_episode: usize, weights: FusionWeights, seed: u64) -> Self {
        assert!(node_count > 0 && steps_per_episode > 0);
        Self {
            node_count,
            steps_per_episode,
            weights,
            reward_correct: 5.0,
            reward_incorrect: -1.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            step: 0,
            readings: Vec::new(),
        }
    }

    pub fn with_rewards(mut self, correct: f64, incorrect: f64) -> Self {
        self.reward_correct = correct;
        self.reward_incorrect = incorrect;
        self
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn action_count(&self) -> usize {
        self.node_count
    }

    pub fn state_dim(&self) -> usize {
        FEATURES_PER_NODE * self.node_count
    }

    pub fn steps_per_episode(&self) -> usize {
        self.steps_per_episode
    }

    pub fn weights(&self) -> &FusionWeights {
        &self.weights
    }

    pub fn readings(&self) -> &[SensorReading] {
        &self.readings
    }

    pub fn state(&self) -> Vec<f64> {
        state_vector(&self.readings)
    }

    pub fn best_action(&self) -> usize {
        oracle_choice(&self.readings, &self.weights).index()
    }

    pub fn reset(&mut self) -> Vec<f64> {
        self.step = 0;
        self.resample();
        self.state()
    }

    /// Returns `(reward, next_state, terminal)`.
    pub fn step(&mut self, action: usize) -> (f64, Vec<f64>, bool) {
        let reward = if action == self.best_action() {
            self.reward_correct
        } else {
            self.reward_incorrect
        };
        self.step += 1;
        self.resample();
        (reward, self.state(), self.step >= self.steps_per_episode)
    }

    fn resample(&mut self) {
        self.readings = sample_hot_readings(self.node_count, &mut self.rng);
    }
}

/// One reading per node with exactly one uniformly chosen hot node.
pub fn sample_hot_readings<R: Rng + ?Sized>(node_count: usize, rng: &mut R) -> Vec<SensorReading> {
    let hot = rng.random_range(0..node_count);
    (0..node_count)
        .map(|i| {
            let is_hot = i == hot;
            let (smoke, temp, hum) = if is_hot {
                (
                    rng.random_range(2048..=ADC_MAX),
                    rng.random_range(36.0..60.0),
                    rng.random_range(5.0..28.0),
                )
            } else {
                (
                    rng.random_range(0..=1228),
                    rng.random_range(10.0..30.0),
                    rng.random_range(35.0..80.0),
                )
            };
            SensorReading {
                node: NodeId(i as u16),
                timestamp_ms: 0,
                temperature_c: centi(temp),
                humidity_pct: centi(hum),
                pressure_hpa: 650.0,
                smoke_raw: smoke,
                water_raw: 0,
            }
        })
        .collect()
}
