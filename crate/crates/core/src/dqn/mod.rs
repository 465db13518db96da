//! Deep Q-learning on the growth simulator.
//!
//! The agent observes `(measured OD, setpoint)`, picks one of 17 evenly spaced
//! pump rates, and is rewarded with the negative squared distance of the next
//! measurement from the setpoint. Training uses experience replay, a
//! periodically synchronized target network, and Adam.

mod adam;
mod network;
mod replay;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use adam::{adam_update, AdamState};
pub use network::{load_network, save_network, QNetwork, FILE_VERSION, STANDARD_LAYERS};
pub use replay::ReplayBuffer;

use crate::controllers::{check_setpoint, ControlDecision, Controller};
use crate::error::{Error, Result};
use crate::model::{measure, step_zoh, GrowthParams, SimState, U_MAX};

pub const N_ACTIONS: usize = 17;

/// Pump rates `U_MAX * i / 16`, `i = 0..=16`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActionSet([f64; N_ACTIONS]);

impl ActionSet {
    pub fn new() -> Self {
        let mut a = [0.0; N_ACTIONS];
        for (i, v) in a.iter_mut().enumerate() {
            *v = U_MAX * i as f64 / (N_ACTIONS - 1) as f64;
        }
        Self(a)
    }

    pub fn rate(&self, index: usize) -> f64 {
        self.0[index]
    }

    pub fn rates(&self) -> &[f64; N_ACTIONS] {
        &self.0
    }
}

impl Default for ActionSet {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    /// `(measured OD, setpoint)` before the action.
    pub state: [f64; 2],
    pub action: usize,
    pub reward: f64,
    pub next_state: [f64; 2],
    pub terminal: bool,
}

pub fn reward(y_next: f64, setpoint: f64) -> f64 {
    -(y_next - setpoint).powi(2)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub episodes: usize,
    pub steps_per_episode: usize,
    /// Control interval, min.
    pub dt: f64,
    /// Integration substep, min.
    pub substep: f64,
    pub gamma: f64,
    pub lr: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Episodes over which epsilon decays linearly; flat afterwards.
    pub epsilon_decay_episodes: usize,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// Minibatch updates after every environment step.
    pub updates_per_step: usize,
    /// Gradient steps between hard target-network copies.
    pub target_sync: usize,
    /// Multiplier on the rewards the network learns from. Differences between
    /// actions are ~1e-3 in raw reward units, below what Adam resolves at the
    /// default rate; scaling leaves the greedy policy's optimum unchanged.
    /// Reported episode returns are unscaled.
    pub reward_scale: f64,
    /// Train on the noisy simulator (process and measurement noise on).
    pub noisy: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 100,
            steps_per_episode: 100,
            dt: 1.0,
            substep: 0.1,
            gamma: 0.99,
            lr: 0.001,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_episodes: 70,
            buffer_capacity: 10_000,
            batch_size: 32,
            updates_per_step: 1,
            target_sync: 500,
            reward_scale: 20.0,
            noisy: true,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.episodes == 0 || self.steps_per_episode == 0 {
            return bad("episodes and steps_per_episode must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        // lr = 0 is accepted: it freezes the network, a useful degenerate baseline
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be >= 0");
        }
        for e in [self.epsilon_start, self.epsilon_end] {
            if !(0.0..=1.0).contains(&e) {
                return bad("epsilon values must lie in [0, 1]");
            }
        }
        if self.buffer_capacity == 0
            || self.batch_size == 0
            || self.target_sync == 0
            || self.updates_per_step == 0
        {
            return bad(
                "buffer_capacity, batch_size, updates_per_step and target_sync must be positive",
            );
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return bad("reward_scale must be positive");
        }
        crate::model::substep_count(self.dt, self.substep)?;
        Ok(())
    }

    pub fn epsilon(&self, episode: usize) -> f64 {
        if self.epsilon_decay_episodes == 0 || episode >= self.epsilon_decay_episodes {
            return self.epsilon_end;
        }
        let frac = episode as f64 / self.epsilon_decay_episodes as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

/// Setpoints drawn during training: 0.2, 0.3, ..., 1.0.
pub fn training_setpoints() -> Vec<f64> {
    (2..=10).map(|i| i as f64 / 10.0).collect()
}

pub const INITIAL_OD_RANGE: (f64, f64) = (0.1, 1.0);

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Epsilon-greedy action choice.
pub fn select_action<R: Rng + ?Sized>(
    net: &QNetwork,
    state: [f64; 2],
    epsilon: f64,
    rng: &mut R,
) -> usize {
    if rng.random::<f64>() < epsilon {
        rng.random_range(0..net.num_outputs())
    } else {
        argmax(&net.forward(&state))
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub net: QNetwork,
    /// Discounted return `sum_k gamma^k r_k` of every episode.
    pub episode_rewards: Vec<f64>,
}

impl TrainOutcome {
    /// Mean return of the first and last `n` episodes.
    pub fn improvement(&self, n: usize) -> (f64, f64) {
        let r = &self.episode_rewards;
        let n = n.min(r.len()).max(1);
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        (mean(&r[..n]), mean(&r[r.len() - n..]))
    }

    pub fn converged(&self) -> bool {
        let (first, last) = self.improvement(10);
        last > first
    }

    pub fn rewards_csv(&self) -> String {
        let mut s = String::from("episode,cumulative_reward\n");
        for (i, r) in self.episode_rewards.iter().enumerate() {
            s.push_str(&format!("{},{}\n", i + 1, r));
        }
        s
    }
}

/// Train a value network on synthetic rollouts of `params`.
///
/// Every episode draws a setpoint from [`training_setpoints`] and an initial
/// density from [`INITIAL_OD_RANGE`]; every environment step is followed by
/// one minibatch update once the buffer holds a full batch.
pub fn train(params: &GrowthParams, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let env_params = if cfg.noisy {
        params.clone()
    } else {
        params.noise_free()
    };
    let actions = ActionSet::new();
    let setpoints = training_setpoints();

    let mut agent_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut env_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    env_rng.set_stream(1);

    let mut net = QNetwork::random(&STANDARD_LAYERS, &mut agent_rng);
    let mut target = net.clone();
    let mut adam = AdamState::new(net.params().len());
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut grad_steps = 0usize;
    let mut episode_rewards = Vec::with_capacity(cfg.episodes);

    for episode in 0..cfg.episodes {
        let setpoint = setpoints[agent_rng.random_range(0..setpoints.len())];
        let x0 = agent_rng.random_range(INITIAL_OD_RANGE.0..=INITIAL_OD_RANGE.1);
        let epsilon = cfg.epsilon(episode);
        let mut state = SimState::new(x0);
        let mut y = measure(&state, &env_params, &mut env_rng);
        let mut ret = 0.0;
        let mut discount = 1.0;

        for _ in 0..cfg.steps_per_episode {
            let s = [y, setpoint];
            let a = select_action(&net, s, epsilon, &mut agent_rng);
            state = step_zoh(
                state,
                actions.rate(a),
                cfg.dt,
                cfg.substep,
                &env_params,
                &mut env_rng,
            )?;
            let y_next = measure(&state, &env_params, &mut env_rng);
            let r = reward(y_next, setpoint);
            ret += discount * r;
            discount *= cfg.gamma;
            // episodes end on a time limit, so the last transition still bootstraps
            buffer.push(Transition {
                state: s,
                action: a,
                reward: cfg.reward_scale * r,
                next_state: [y_next, setpoint],
                terminal: false,
            });
            y = y_next;

            for _ in 0..cfg.updates_per_step {
                if buffer.len() < cfg.batch_size {
                    break;
                }
                let batch = buffer.sample(cfg.batch_size, &mut agent_rng);
                let (loss, grad) = net.loss_and_gradient(&target, &batch, cfg.gamma);
                if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    return Err(Error::Diverged {
                        episode: episode + 1,
                        detail: format!("loss = {loss}"),
                    });
                }
                adam_update(net.params_mut(), &grad, &mut adam, cfg.lr)?;
                grad_steps += 1;
                if grad_steps.is_multiple_of(cfg.target_sync) {
                    target = net.clone();
                }
            }
        }
        episode_rewards.push(ret);
    }

    Ok(TrainOutcome {
        net,
        episode_rewards,
    })
}

/// Deployable policy: the pump rate of the highest-valued action.
#[derive(Clone, Debug)]
pub struct GreedyPolicy {
    net: Arc<QNetwork>,
    actions: ActionSet,
}

pub fn greedy_policy(net: impl Into<Arc<QNetwork>>) -> GreedyPolicy {
    GreedyPolicy {
        net: net.into(),
        actions: ActionSet::new(),
    }
}

impl GreedyPolicy {
    pub fn action(&self, y_meas: f64, setpoint: f64) -> usize {
        argmax(&self.net.forward(&[y_meas, setpoint]))
    }

    pub fn network(&self) -> &QNetwork {
        &self.net
    }
}

impl Controller for GreedyPolicy {
    fn name(&self) -> &str {
        "DQN"
    }

    fn step(&mut self, y_meas: f64, setpoint: f64) -> Result<ControlDecision> {
        check_setpoint(setpoint)?;
        ControlDecision::clamped(self.actions.rate(self.action(y_meas, setpoint)))
    }
}
