//! Double-DQN learner over [`crate::env::TradingEnv`] observations.
//!
//! The online network picks the next action and the target network scores
//! it:
//!
//! ```text
//! y = r + gamma * Q_target(s', argmax_a Q_online(s', a))   (y = r if terminal)
//! ```
//!
//! Updates minimize the mean squared TD error with the gradient norm clipped
//! to `grad_clip`. [`train`] runs the multi-run protocol, one independently
//! seeded run per thread.

mod network;
mod replay;
mod run;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::direction::Direction;
use crate::env::{EnvError, Observation};

pub use network::{ForwardTrace, QNetwork, N_ACTIONS};
pub use replay::{ReplayBuffer, Transition};
pub use run::{
    episode_sharpe, evaluate_greedy, random_policy_srs, train, train_run, Checkpoint, EnvPair, GreedyEpisode, QTrace,
    RunRecord,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AgentError {
    #[error("argument error: {0}")]
    Argument(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("training diverged: {0}")]
    Training(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("run {run}: {source}")]
    Run { run: usize, source: Box<AgentError> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub runs: usize,
    pub episodes_per_run: usize,
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Gradient updates between target-network copies.
    pub target_sync: u64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Environment steps over which epsilon falls linearly. `None` spreads the
    /// decay over the whole run.
    pub epsilon_decay_steps: Option<u64>,
    pub hidden: Vec<usize>,
    pub grad_clip: f64,
    pub optimizer: Optimizer,
    /// Run `i` is seeded with `base_seed + i`.
    pub base_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            runs: 25,
            episodes_per_run: 50,
            gamma: 0.99,
            learning_rate: 1e-3,
            batch_size: 64,
            buffer_capacity: 100_000,
            target_sync: 1_000,
            epsilon_start: 1.0,
            epsilon_end: 0.01,
            epsilon_decay_steps: None,
            hidden: vec![128, 128],
            grad_clip: 1.0,
            optimizer: Optimizer::default(),
            base_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: String| Err(AgentError::Config(m));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma {} outside (0, 1]", self.gamma));
        }
        for (name, e) in [("epsilon_start", self.epsilon_start), ("epsilon_end", self.epsilon_end)] {
            if !(0.0..=1.0).contains(&e) {
                return bad(format!("{name} {e} outside [0, 1]"));
            }
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be finite and non-negative", self.learning_rate));
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return bad("batch_size must be positive and fit in the buffer".into());
        }
        if self.target_sync == 0 {
            return bad("target_sync must be positive".into());
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return bad("hidden layer widths must be positive".into());
        }
        if !(self.grad_clip > 0.0) {
            return bad("grad_clip must be positive".into());
        }
        if self.runs == 0 || self.episodes_per_run == 0 {
            return bad("runs and episodes_per_run must be positive".into());
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Epsilon after `step` environment steps out of `total`.
    pub fn epsilon_at(&self, step: u64, total: u64) -> f64 {
        let span = self.epsilon_decay_steps.unwrap_or(total).max(1);
        let frac = (step as f64 / span as f64).min(1.0);
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

/// Greedy choice with ties going to LONG.
pub fn greedy(q: [f64; N_ACTIONS]) -> Direction {
    if q[Direction::Short.index()] > q[Direction::Long.index()] {
        Direction::Short
    } else {
        Direction::Long
    }
}

/// Double-DQN targets for a batch.
pub fn td_targets(batch: &[&Transition], gamma: f64, online: &QNetwork, target: &QNetwork) -> Vec<f64> {
    batch
        .iter()
        .map(|t| {
            if t.done {
                t.reward
            } else {
                let a = greedy(online.q_values(&t.next_state)).index();
                t.reward + gamma * target.q_values(&t.next_state)[a]
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
enum OptState {
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
        m: Vec<f64>,
        v: Vec<f64>,
        t: i32,
    },
}

/// Online and target networks plus optimizer state.
#[derive(Debug, Clone)]
pub struct DdqnAgent {
    online: QNetwork,
    target: QNetwork,
    opt: OptState,
    gamma: f64,
    learning_rate: f64,
    batch_size: usize,
    target_sync: u64,
    grad_clip: f64,
    updates: u64,
}

impl DdqnAgent {
    pub fn new<R: Rng + ?Sized>(input: usize, cfg: &TrainConfig, rng: &mut R) -> Result<Self, AgentError> {
        cfg.validate()?;
        if input == 0 {
            return Err(AgentError::Argument("observation dimension must be positive".into()));
        }
        Ok(Self::from_network(QNetwork::new(input, &cfg.hidden, rng), cfg))
    }

    /// Wraps an existing network; the target starts as a copy.
    pub fn from_network(online: QNetwork, cfg: &TrainConfig) -> Self {
        let n = online.num_params();
        let opt = match cfg.optimizer {
            Optimizer::Sgd => OptState::Sgd,
            Optimizer::Adam { beta1, beta2, eps } => OptState::Adam {
                beta1,
                beta2,
                eps,
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
            },
        };
        DdqnAgent {
            target: online.clone(),
            online,
            opt,
            gamma: cfg.gamma,
            learning_rate: cfg.learning_rate,
            batch_size: cfg.batch_size,
            target_sync: cfg.target_sync,
            grad_clip: cfg.grad_clip,
            updates: 0,
        }
    }

    pub fn online(&self) -> &QNetwork {
        &self.online
    }

    pub fn target(&self) -> &QNetwork {
        &self.target
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn sync_target(&mut self) {
        self.target.copy_from(&self.online);
    }

    pub fn q_values(&self, obs: &Observation) -> Result<[f64; N_ACTIONS], AgentError> {
        if !obs.is_finite() {
            return Err(AgentError::Argument("observation has non-finite entries".into()));
        }
        if obs.len() != self.online.input_dim() {
            return Err(AgentError::Argument(format!(
                "observation length {} but the network expects {}",
                obs.len(),
                self.online.input_dim()
            )));
        }
        Ok(self.online.q_values(obs.values()))
    }

    /// Epsilon-greedy action.
    pub fn act<R: Rng + ?Sized>(&self, obs: &Observation, epsilon: f64, rng: &mut R) -> Result<Direction, AgentError> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(AgentError::Argument(format!("epsilon {epsilon} outside [0, 1]")));
        }
        let q = self.q_values(obs)?;
        if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
            return Ok(if rng.gen::<bool>() { Direction::Long } else { Direction::Short });
        }
        Ok(greedy(q))
    }

    /// One gradient step on a sampled batch. Returns the pre-update loss.
    pub fn train_step<R: Rng + ?Sized>(&mut self, buffer: &ReplayBuffer, rng: &mut R) -> Result<f64, AgentError> {
        let batch = buffer.sample(self.batch_size, rng).ok_or_else(|| {
            AgentError::Argument(format!("buffer holds {} transitions; batch needs {}", buffer.len(), self.batch_size))
        })?;
        self.update_on(&batch)
    }

    /// One gradient step on the given transitions.
    pub fn update_on(&mut self, batch: &[&Transition]) -> Result<f64, AgentError> {
        if batch.is_empty() {
            return Err(AgentError::Argument("empty batch".into()));
        }
        let ys = td_targets(batch, self.gamma, &self.online, &self.target);
        let n = batch.len() as f64;
        let mut grad = vec![0.0; self.online.num_params()];
        let mut loss = 0.0;
        for (t, y) in batch.iter().zip(&ys) {
            let trace = self.online.forward_trace(&t.state);
            let err = trace.q_values()[t.action] - y;
            loss += err * err / n;
            let mut dq = [0.0; N_ACTIONS];
            dq[t.action] = 2.0 * err / n;
            self.online.accumulate_gradient(&trace, dq, &mut grad);
        }
        if !loss.is_finite() {
            return Err(AgentError::Training(self.diagnostic(loss, batch, &ys)));
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > self.grad_clip {
            let s = self.grad_clip / norm;
            grad.iter_mut().for_each(|g| *g *= s);
        }
        self.apply(&grad);
        if !self.online.is_finite() {
            return Err(AgentError::Training(self.diagnostic(loss, batch, &ys)));
        }
        self.updates += 1;
        if self.updates % self.target_sync == 0 {
            self.sync_target();
        }
        Ok(loss)
    }

    fn apply(&mut self, grad: &[f64]) {
        let lr = self.learning_rate;
        if lr == 0.0 {
            return;
        }
        let params = self.online.params_mut();
        match &mut self.opt {
            OptState::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            OptState::Adam { beta1, beta2, eps, m, v, t } => {
                *t += 1;
                let c1 = 1.0 - beta1.powi(*t);
                let c2 = 1.0 - beta2.powi(*t);
                for i in 0..params.len() {
                    m[i] = *beta1 * m[i] + (1.0 - *beta1) * grad[i];
                    v[i] = *beta2 * v[i] + (1.0 - *beta2) * grad[i] * grad[i];
                    params[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + *eps);
                }
            }
        }
    }

    fn diagnostic(&self, loss: f64, batch: &[&Transition], ys: &[f64]) -> String {
        let bad_params = self.online.params().iter().filter(|p| !p.is_finite()).count();
        let max_abs_state = batch
            .iter()
            .flat_map(|t| t.state.iter().chain(&t.next_state))
            .fold(0.0f64, |a, x| a.max(x.abs()));
        let rewards: Vec<f64> = batch.iter().map(|t| t.reward).collect();
        format!(
            "loss {loss} after {} updates; {bad_params} non-finite parameters; max |state| {max_abs_state}; \
             rewards {rewards:?}; targets {ys:?}",
            self.updates
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            hidden: vec![8],
            batch_size: 1,
            ..TrainConfig::default()
        }
    }

    /// 1 -> 2 linear net with q = [w0 * x, w1 * x] (no hidden layer).
    fn linear(w0: f64, w1: f64) -> QNetwork {
        QNetwork::from_params(vec![1, 2], vec![w0, w1, 0.0, 0.0]).unwrap()
    }

    fn tr(state: f64, action: usize, reward: f64, next: f64, done: bool) -> Transition {
        Transition {
            state: vec![state],
            action,
            reward,
            next_state: vec![next],
            done,
        }
    }

    #[test]
    fn greedy_and_ties() {
        assert_eq!(greedy([0.2, 0.7]), Direction::Long);
        assert_eq!(greedy([0.7, 0.2]), Direction::Short);
        assert_eq!(greedy([0.5, 0.5]), Direction::Long);
    }

    #[test]
    fn act_rejects_bad_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let agent = DdqnAgent::new(3, &small_cfg(), &mut rng).unwrap();
        assert!(agent.act(&Observation(vec![0.0, f64::NAN, 0.0]), 0.0, &mut rng).is_err());
        assert!(agent.act(&Observation(vec![0.0; 2]), 0.0, &mut rng).is_err());
        assert!(agent.act(&Observation(vec![0.0; 3]), 1.5, &mut rng).is_err());
    }

    #[test]
    fn td_target_cases() {
        // Online prefers LONG at s' = 1, target values LONG at 3.
        let online = linear(1.0, 2.0);
        let target = linear(10.0, 3.0);
        let terminal = tr(0.0, 0, 0.5, 1.0, true);
        let live = tr(0.0, 1, 0.25, 1.0, false);
        let ys = td_targets(&[&terminal, &live], 0.9, &online, &target);
        assert_eq!(ys[0], 0.5);
        // Evaluation uses the target's LONG value, not its maximum (10).
        assert_eq!(ys[1], 0.25 + 0.9 * 3.0);
        let ys0 = td_targets(&[&terminal, &live], 0.0, &online, &target);
        assert_eq!(ys0, vec![0.5, 0.25]);
    }

    #[test]
    fn one_sample_regression_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = TrainConfig {
            hidden: vec![16, 16],
            batch_size: 1,
            learning_rate: 0.05,
            optimizer: Optimizer::Sgd,
            ..TrainConfig::default()
        };
        let mut agent = DdqnAgent::new(4, &cfg, &mut rng).unwrap();
        let t = Transition {
            state: vec![0.1, -0.2, 0.3, 1.0],
            action: 1,
            reward: 0.75,
            next_state: vec![0.0; 4],
            done: true,
        };
        let mut last = f64::INFINITY;
        for _ in 0..2000 {
            let loss = agent.update_on(&[&t]).unwrap();
            assert!(loss <= last + 1e-12, "loss rose from {last} to {loss}");
            last = loss;
        }
        assert!(last < 1e-6, "final loss {last}");
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..small_cfg()
        };
        let mut agent = DdqnAgent::new(2, &cfg, &mut rng).unwrap();
        let before = agent.online().clone();
        let t = tr(0.0, 1, 1.0, 0.0, true);
        let t = Transition {
            state: vec![0.3, 0.4],
            next_state: vec![0.0, 0.0],
            ..t
        };
        agent.update_on(&[&t]).unwrap();
        assert_eq!(agent.online(), &before);
    }

    #[test]
    fn target_copies_on_sync() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = TrainConfig {
            target_sync: 3,
            learning_rate: 0.05,
            ..small_cfg()
        };
        let mut agent = DdqnAgent::new(2, &cfg, &mut rng).unwrap();
        let t = Transition {
            state: vec![0.3, 0.4],
            action: 0,
            reward: 1.0,
            next_state: vec![0.1, 0.1],
            done: false,
        };
        let initial = agent.target().clone();
        agent.update_on(&[&t]).unwrap();
        agent.update_on(&[&t]).unwrap();
        assert_eq!(agent.target(), &initial);
        assert_ne!(agent.online(), &initial);
        agent.update_on(&[&t]).unwrap();
        assert_eq!(agent.target().params(), agent.online().params());
    }

    #[test]
    fn exploration_is_fair() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let agent = DdqnAgent::new(2, &small_cfg(), &mut rng).unwrap();
        let obs = Observation(vec![0.1, 0.2]);
        let n = 10_000;
        let longs = (0..n)
            .filter(|_| agent.act(&obs, 1.0, &mut rng).unwrap() == Direction::Long)
            .count() as f64;
        let sd = (n as f64 * 0.25).sqrt();
        assert!((longs - n as f64 / 2.0).abs() <= 3.0 * sd, "{longs} LONG draws");
    }

    #[test]
    fn epsilon_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.epsilon_at(0, 100), 1.0);
        assert!((cfg.epsilon_at(50, 100) - 0.505).abs() < 1e-12);
        assert!((cfg.epsilon_at(100, 100) - 0.01).abs() < 1e-15);
        assert_eq!(cfg.epsilon_at(500, 100), cfg.epsilon_at(100, 100));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { gamma: 0.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { epsilon_end: 1.5, ..TrainConfig::default() }.validate().is_err());
        assert_ne!(TrainConfig::default().digest(), TrainConfig { gamma: 0.9, ..TrainConfig::default() }.digest());
    }
}
