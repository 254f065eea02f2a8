use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::env::SectorEnv;
use super::network::QNetwork;
use super::replay::{ReplayBuffer, Transition};
use super::DqnError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub epsilon_start: f64,
    pub epsilon_decay: f64,
    pub epsilon_min: f64,
    pub reward_correct: f64,
    pub reward_incorrect: f64,
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub moving_average_window: usize,
    pub node_count: usize,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            alpha: 0.001,
            gamma: 0.75,
            batch_size: 64,
            buffer_capacity: ReplayBuffer::DEFAULT_CAPACITY,
            epsilon_start: 1.0,
            epsilon_decay: 0.995,
            epsilon_min: 0.01,
            reward_correct: 5.0,
            reward_incorrect: -1.0,
            episodes: 800,
            steps_per_episode: 50,
            moving_average_window: 100,
            node_count: 3,
            seed: 7,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), DqnError> {
        let bad = |m: &str| Err(DqnError::InvalidConfig(m.to_string()));
        if !(self.alpha > 0.0) {
            return bad("alpha must be > 0");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must be within [0, 1]");
        }
        if !(0.0 <= self.epsilon_min
            && self.epsilon_min <= self.epsilon_start
            && self.epsilon_start <= 1.0)
        {
            return bad("need 0 <= epsilon_min <= epsilon_start <= 1");
        }
        if !(0.0..=1.0).contains(&self.epsilon_decay) {
            return bad("epsilon_decay must be within [0, 1]");
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return bad("need 0 < batch_size <= buffer_capacity");
        }
        if self.steps_per_episode == 0 || self.node_count == 0 {
            return bad("steps_per_episode and node_count must be > 0");
        }
        if self.moving_average_window == 0 {
            return bad("moving_average_window must be > 0");
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, DqnError> {
        let cfg: Self = toml::from_str(text).map_err(|e| DqnError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn environment(&self, weights: crate::sensor::FusionWeights) -> SectorEnv {
        SectorEnv::new(
            self.node_count,
            self.steps_per_episode,
            weights,
            self.seed.wrapping_mul(0x9E37_79B9).wrapping_add(1),
        )
        .with_rewards(self.reward_correct, self.reward_incorrect)
    }
}

/// Lowest index among the maximal values.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Epsilon-greedy action choice.
pub fn select_action<R: Rng + ?Sized>(
    net: &QNetwork,
    state: &[f64],
    epsilon: f64,
    rng: &mut R,
) -> Result<usize, DqnError> {
    let q = net.forward(state)?;
    let explore: f64 = rng.random();
    if explore < epsilon {
        Ok(rng.random_range(0..q.len()))
    } else {
        Ok(argmax(&q))
    }
}

pub fn td_target(
    reward: f64,
    next_state: &[f64],
    terminal: bool,
    net: &QNetwork,
    gamma: f64,
) -> Result<f64, DqnError> {
    if terminal {
        return Ok(reward);
    }
    let q = net.forward(next_state)?;
    let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(reward + gamma * best)
}

/// One SGD step on the batch MSE; returns the loss before the step.
pub fn train_batch(net: &mut QNetwork, batch: &[&Transition], config: &TrainerConfig) -> Result<f64, DqnError> {
    if batch.is_empty() {
        return Err(DqnError::EmptyBatch);
    }
    let targets = batch
        .iter()
        .map(|t| td_target(t.reward, &t.next_state, t.terminal, net, config.gamma))
        .collect::<Result<Vec<_>, _>>()?;
    let rows: Vec<(&[f64], usize, f64)> = batch
        .iter()
        .zip(&targets)
        .map(|(t, y)| (t.state.as_slice(), t.action, *y))
        .collect();
    let (loss, grads) = net.loss_and_gradient(&rows)?;
    net.apply_gradients(&grads, config.alpha);
    Ok(loss)
}

/// Windowed mean; the first `w - 1` entries average what is available.
pub fn moving_average(values: &[f64], window: usize) -> Result<Vec<f64>, DqnError> {
    if window == 0 {
        return Err(DqnError::ZeroWindow);
    }
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (t, v) in values.iter().enumerate() {
        sum += v;
        if t >= window {
            sum -= values[t - window];
        }
        out.push(sum / (t + 1).min(window) as f64);
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingMetrics {
    pub episode_rewards: Vec<f64>,
    pub moving_average: Vec<f64>,
    pub losses: Vec<f64>,
    /// Mean loss of the updates made during each episode (NaN if none).
    pub episode_mean_loss: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub steps_per_episode: usize,
}

impl TrainingMetrics {
    pub fn final_moving_average(&self) -> Option<f64> {
        self.moving_average.last().copied()
    }

    /// Final moving average divided by the episode length.
    pub fn final_per_step_average(&self) -> Option<f64> {
        self.final_moving_average()
            .map(|m| m / self.steps_per_episode.max(1) as f64)
    }

    /// `episode,reward,moving_avg,mean_loss`; an episode without updates has an empty loss.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "episode,reward,moving_avg,mean_loss")?;
        for (i, ((r, m), l)) in self
            .episode_rewards
            .iter()
            .zip(&self.moving_average)
            .zip(&self.episode_mean_loss)
            .enumerate()
        {
            if l.is_nan() {
                writeln!(out, "{},{},{},", i + 1, r, m)?;
            } else {
                writeln!(out, "{},{},{},{}", i + 1, r, m, l)?;
            }
        }
        Ok(())
    }
}

/// Train a fresh agent network on `env`.
pub fn run_training(env: &mut SectorEnv, config: &TrainerConfig) -> Result<(QNetwork, TrainingMetrics), DqnError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net = QNetwork::agent(env.state_dim(), env.action_count(), &mut rng)?;
    let metrics = train_network(&mut net, env, config, &mut rng)?;
    Ok((net, metrics))
}

/// Continue training an existing network.
pub fn train_network<R: Rng + ?Sized>(
    net: &mut QNetwork,
    env: &mut SectorEnv,
    config: &TrainerConfig,
    rng: &mut R,
) -> Result<TrainingMetrics, DqnError> {
    config.validate()?;
    if net.action_count() != env.action_count() || net.input_dim() != env.state_dim() {
        return Err(DqnError::InvalidConfig(format!(
            "network {:?} does not fit env with {} inputs and {} actions",
            net.sizes(),
            env.state_dim(),
            env.action_count()
        )));
    }
    let mut buffer = ReplayBuffer::new(config.buffer_capacity);
    let mut metrics = TrainingMetrics {
        steps_per_episode: env.steps_per_episode(),
        ..TrainingMetrics::default()
    };
    let mut epsilon = config.epsilon_start;

    for _ in 0..config.episodes {
        let mut state = env.reset();
        let mut total = 0.0;
        let mut loss_sum = 0.0;
        let mut updates = 0usize;
        loop {
            let action = select_action(net, &state, epsilon, rng)?;
            let (reward, next_state, terminal) = env.step(action);
            total += reward;
            buffer.push(Transition {
                state,
                action,
                reward,
                next_state: next_state.clone(),
                terminal,
            });
            if buffer.len() >= config.batch_size {
                let batch = buffer.sample(config.batch_size, rng);
                let loss = train_batch(net, &batch, config)?;
                metrics.losses.push(loss);
                loss_sum += loss;
                updates += 1;
            }
            state = next_state;
            if terminal {
                break;
            }
        }
        metrics.episode_rewards.push(total);
        metrics.episode_mean_loss.push(if updates == 0 {
            f64::NAN
        } else {
            loss_sum / updates as f64
        });
        metrics.epsilons.push(epsilon);
        epsilon = (epsilon * config.epsilon_decay).max(config.epsilon_min);
    }
    metrics.moving_average = moving_average(&metrics.episode_rewards, config.moving_average_window)?;
    Ok(metrics)
}

/// Fraction of `samples` fresh env states on which the greedy action
/// equals the signal-ranking winner.
pub fn greedy_agreement(net: &QNetwork, env: &mut SectorEnv, samples: usize) -> Result<f64, DqnError> {
    let mut agree = 0usize;
    env.reset();
    for _ in 0..samples {
        let q = net.forward(&env.state())?;
        if argmax(&q) == env.best_action() {
            agree += 1;
        }
        env.step(0);
    }
    Ok(agree as f64 / samples.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dqn::network::Dense;
    use crate::sensor::FusionWeights;

    fn fixed_q(q: &[f64]) -> QNetwork {
        // One-input linear net whose output is its bias.
        QNetwork::from_layers(vec![Dense {
            inputs: 1,
            outputs: q.len(),
            weights: vec![0.0; q.len()],
            bias: q.to_vec(),
        }])
        .unwrap()
    }

    #[test]
    fn greedy_selection() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(select_action(&fixed_q(&[1.0, 9.0, 3.0]), &[0.0], 0.0, &mut rng).unwrap(), 1);
        assert_eq!(select_action(&fixed_q(&[5.0, 5.0]), &[0.0], 0.0, &mut rng).unwrap(), 0);
    }

    #[test]
    fn full_exploration_is_uniform() {
        let net = fixed_q(&[1.0, 9.0, 3.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut counts = [0usize; 3];
        for _ in 0..10_000 {
            counts[select_action(&net, &[0.0], 1.0, &mut rng).unwrap()] += 1;
        }
        for c in counts {
            assert!((c as f64 / 10_000.0 - 1.0 / 3.0).abs() < 0.02, "{counts:?}");
        }
    }

    #[test]
    fn td_targets() {
        let zero = fixed_q(&[0.0, 0.0]);
        assert_eq!(td_target(5.0, &[0.0], true, &fixed_q(&[100.0]), 0.75).unwrap(), 5.0);
        assert_eq!(td_target(5.0, &[0.0], false, &zero, 0.75).unwrap(), 5.0);
        assert_eq!(td_target(-1.0, &[0.0], false, &fixed_q(&[4.0, 1.0]), 0.75).unwrap(), 2.0);
    }

    fn transition(action: usize, reward: f64) -> Transition {
        Transition {
            state: vec![0.0],
            action,
            reward,
            next_state: vec![0.0],
            terminal: true,
        }
    }

    #[test]
    fn fixed_point_batch_leaves_weights() {
        let mut net = fixed_q(&[2.0, 3.0]);
        let before = net.clone();
        let batch = [transition(0, 2.0), transition(1, 3.0)];
        let refs: Vec<&Transition> = batch.iter().collect();
        let loss = train_batch(&mut net, &refs, &TrainerConfig::default()).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(net, before);
    }

    #[test]
    fn single_transition_loss() {
        let mut net = fixed_q(&[1.0]);
        let t = transition(0, 5.0);
        assert_eq!(train_batch(&mut net, &[&t], &TrainerConfig::default()).unwrap(), 16.0);
        assert!(matches!(
            train_batch(&mut net, &[], &TrainerConfig::default()),
            Err(DqnError::EmptyBatch)
        ));
    }

    #[test]
    fn moving_average_examples() {
        assert_eq!(moving_average(&[5.0; 150], 100).unwrap(), vec![5.0; 150]);
        let ramp: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(moving_average(&ramp, 100).unwrap()[99], 50.5);
        assert_eq!(moving_average(&ramp, 1).unwrap(), ramp);
        assert_eq!(moving_average(&[1.0, 3.0], 5).unwrap(), vec![1.0, 2.0]);
        assert_eq!(moving_average(&ramp, 0), Err(DqnError::ZeroWindow));
    }

    #[test]
    fn zero_episodes_is_a_no_op() {
        let cfg = TrainerConfig {
            episodes: 0,
            ..TrainerConfig::default()
        };
        let mut env = cfg.environment(FusionWeights::default());
        let (net, metrics) = run_training(&mut env, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        assert_eq!(net, QNetwork::agent(9, 3, &mut rng).unwrap());
        assert!(metrics.episode_rewards.is_empty() && metrics.losses.is_empty());
        let mut csv = Vec::new();
        metrics.write_csv(&mut csv).unwrap();
        assert_eq!(csv, b"episode,reward,moving_avg,mean_loss\n");
    }

    #[test]
    fn training_replays_deterministically() {
        let cfg = TrainerConfig {
            episodes: 6,
            steps_per_episode: 20,
            ..TrainerConfig::default()
        };
        let run = || {
            let mut env = cfg.environment(FusionWeights::default());
            run_training(&mut env, &cfg).unwrap()
        };
        let (net_a, m_a) = run();
        let (net_b, m_b) = run();
        assert_eq!(net_a, net_b);
        assert_eq!(m_a.episode_rewards, m_b.episode_rewards);
        assert_eq!(m_a.losses, m_b.losses);
        assert_eq!(m_a.moving_average.len(), 6);
        // 120 steps, first update once 64 transitions are stored.
        assert_eq!(m_a.losses.len(), 120 - 63);
    }

    #[test]
    fn loss_descends_on_frozen_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut env = SectorEnv::new(3, 50, FusionWeights::default(), 3);
        let mut net = QNetwork::agent(9, 3, &mut rng).unwrap();
        let mut s = env.reset();
        let mut batch = Vec::new();
        for i in 0..32 {
            let a = i % 3;
            let (r, next, _) = env.step(a);
            batch.push(Transition {
                state: s,
                action: a,
                reward: r,
                next_state: next.clone(),
                terminal: true,
            });
            s = next;
        }
        let refs: Vec<&Transition> = batch.iter().collect();
        let cfg = TrainerConfig::default();
        let mut last = f64::INFINITY;
        for _ in 0..50 {
            let loss = train_batch(&mut net, &refs, &cfg).unwrap();
            assert!(loss <= last + 1e-12, "{loss} > {last}");
            last = loss;
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainerConfig::default().validate().is_ok());
        let bad = TrainerConfig {
            gamma: 1.5,
            ..TrainerConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainerConfig {
            epsilon_min: 0.5,
            epsilon_start: 0.2,
            ..TrainerConfig::default()
        };
        assert!(bad.validate().is_err());
        let parsed = TrainerConfig::from_toml_str("episodes = 10\nseed = 3\n").unwrap();
        assert_eq!((parsed.episodes, parsed.seed, parsed.alpha), (10, 3, 0.001));
    }
}
