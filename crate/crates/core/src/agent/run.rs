//! The multi-run training protocol and out-of-sample evaluation.

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AgentError, DdqnAgent, QNetwork, ReplayBuffer, TrainConfig, Transition};
use crate::direction::Direction;
use crate::env::{EnvError, TradingEnv};
use crate::eval::{annualized_sharpe, equity_returns, max_drawdown};

/// Training and out-of-sample environments for one run.
#[derive(Debug, Clone)]
pub struct EnvPair {
    pub train: TradingEnv,
    pub test: TradingEnv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTrace {
    pub date: NaiveDate,
    pub q_short: f64,
    pub q_long: f64,
    pub action: Direction,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: usize,
    pub seed: u64,
    pub config_digest: String,
    /// Annualized Sharpe ratio of each training episode.
    pub train_sr: Vec<f64>,
    pub oos_sr: f64,
    pub oos_mdd: f64,
    /// Out-of-sample equity, starting with the initial cash.
    pub equity_curve: Vec<f64>,
    pub q_traces: Vec<QTrace>,
}

/// Flat parameters tagged with the config that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config_digest: String,
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn from_agent(agent: &DdqnAgent, cfg: &TrainConfig) -> Self {
        Checkpoint {
            config_digest: cfg.digest(),
            sizes: agent.online().sizes().to_vec(),
            params: agent.online().params().to_vec(),
        }
    }

    /// Rebuilds the network, refusing a checkpoint made under another config.
    pub fn restore(&self, cfg: &TrainConfig) -> Result<DdqnAgent, AgentError> {
        let digest = cfg.digest();
        if digest != self.config_digest {
            return Err(AgentError::Checkpoint(format!(
                "checkpoint config {} does not match {digest}",
                self.config_digest
            )));
        }
        let net = QNetwork::from_params(self.sizes.clone(), self.params.clone())
            .ok_or_else(|| AgentError::Checkpoint("parameter count does not match layer sizes".into()))?;
        Ok(DdqnAgent::from_network(net, cfg))
    }
}

/// Annualized Sharpe ratio of an equity curve. A flat or too-short curve
/// scores 0, and a curve that hits zero equity is scored on the returns up
/// to that point.
pub fn episode_sharpe(equity: &[f64]) -> f64 {
    annualized_sharpe(&equity_returns(equity)).unwrap_or(0.0)
}

fn episode_mdd(equity: &[f64]) -> f64 {
    max_drawdown(equity).unwrap_or(1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreedyEpisode {
    pub sr: f64,
    pub mdd: f64,
    pub equity_curve: Vec<f64>,
    pub q_traces: Vec<QTrace>,
}

/// Plays one full episode with epsilon = 0.
pub fn evaluate_greedy(agent: &DdqnAgent, env: &mut TradingEnv) -> Result<GreedyEpisode, AgentError> {
    let mut obs = env.reset();
    let mut q_traces = Vec::with_capacity(env.episode_len());
    while !env.is_done() {
        let q = agent.q_values(&obs)?;
        let action = super::greedy(q);
        q_traces.push(QTrace {
            date: env.current_date(),
            q_short: q[Direction::Short.index()],
            q_long: q[Direction::Long.index()],
            action,
            tau: obs.tau(),
        });
        obs = env.step(action)?.observation;
    }
    let equity_curve = env.equity_curve().to_vec();
    Ok(GreedyEpisode {
        sr: episode_sharpe(&equity_curve),
        mdd: episode_mdd(&equity_curve),
        equity_curve,
        q_traces,
    })
}

/// Sharpe ratios of `n` uniformly random LONG/SHORT policies; policy `i`
/// draws its actions from `seed + i`.
pub fn random_policy_srs(env: &mut TradingEnv, n: usize, seed: u64) -> Result<Vec<f64>, EnvError> {
    (0..n as u64)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i));
            env.reset();
            while !env.is_done() {
                let a = if rng.gen::<bool>() { Direction::Long } else { Direction::Short };
                env.step(a)?;
            }
            Ok(episode_sharpe(env.equity_curve()))
        })
        .collect()
}

/// One seeded run: training episodes, then a greedy out-of-sample episode.
pub fn train_run(run_id: usize, pair: EnvPair, cfg: &TrainConfig) -> Result<(RunRecord, Checkpoint), AgentError> {
    cfg.validate()?;
    let EnvPair { mut train, mut test } = pair;
    if train.observation_dim() != test.observation_dim() {
        return Err(AgentError::Argument("train and test observations differ in length".into()));
    }
    let seed = cfg.base_seed.wrapping_add(run_id as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agent = DdqnAgent::new(train.observation_dim(), cfg, &mut rng)?;
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let total = (cfg.episodes_per_run * train.episode_len()) as u64;
    let mut step = 0u64;
    let mut train_sr = Vec::with_capacity(cfg.episodes_per_run);
    for _ in 0..cfg.episodes_per_run {
        let mut obs = train.reset();
        while !train.is_done() {
            let action = agent.act(&obs, cfg.epsilon_at(step, total), &mut rng)?;
            let out = train.step(action)?;
            buffer.push(Transition {
                state: obs.0,
                action: action.index(),
                reward: out.reward,
                next_state: out.observation.0.clone(),
                done: out.done,
            });
            if buffer.len() >= cfg.batch_size {
                agent.train_step(&buffer, &mut rng)?;
            }
            obs = out.observation;
            step += 1;
        }
        train_sr.push(episode_sharpe(train.equity_curve()));
    }
    let oos = evaluate_greedy(&agent, &mut test)?;
    if let Some(q) = oos.q_traces.iter().find(|q| !(q.q_short.is_finite() && q.q_long.is_finite())) {
        return Err(AgentError::Training(format!("non-finite Q-values on {}", q.date)));
    }
    log::debug!("run {run_id} seed {seed}: oos sr {:.3} mdd {:.3}", oos.sr, oos.mdd);
    let record = RunRecord {
        run_id,
        seed,
        config_digest: cfg.digest(),
        train_sr,
        oos_sr: oos.sr,
        oos_mdd: oos.mdd,
        equity_curve: oos.equity_curve,
        q_traces: oos.q_traces,
    };
    Ok((record, Checkpoint::from_agent(&agent, cfg)))
}

/// Runs `cfg.runs` independent runs in parallel. `envs(i)` builds the
/// environments for run `i`.
pub fn train<F>(envs: F, cfg: &TrainConfig) -> Result<Vec<(RunRecord, Checkpoint)>, AgentError>
where
    F: Fn(usize) -> Result<EnvPair, EnvError> + Sync,
{
    cfg.validate()?;
    (0..cfg.runs)
        .into_par_iter()
        .map(|i| {
            let wrap = |e: AgentError| AgentError::Run {
                run: i,
                source: Box::new(e),
            };
            let pair = envs(i).map_err(|e| wrap(e.into()))?;
            train_run(i, pair, cfg).map_err(wrap)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EpisodeConfig, ObsFeatures};
    use crate::frame::FeatureFrame;
    use chrono::Duration;

    fn trending(n: usize) -> FeatureFrame {
        let d0 = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        let dates: Vec<NaiveDate> = (0..n as i64).map(|i| d0 + Duration::days(i)).collect();
        let close: Vec<f64> = (0..n).map(|i| 100.0 * 1.002f64.powi(i as i32)).collect();
        let mut f = FeatureFrame::new(dates).unwrap();
        f.insert_dense("Close", &close).unwrap();
        f
    }

    fn pair(frame: &FeatureFrame) -> Result<EnvPair, EnvError> {
        let cfg = EpisodeConfig {
            window: 5,
            features: ObsFeatures::Close,
            ..EpisodeConfig::default()
        };
        let mid = frame.index()[40];
        let train = TradingEnv::new(
            frame,
            EpisodeConfig {
                end: Some(mid),
                ..cfg.clone()
            },
        )?;
        let test = TradingEnv::new(frame, EpisodeConfig { start: Some(mid), ..cfg })?;
        Ok(EnvPair { train, test })
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            runs: 2,
            episodes_per_run: 3,
            hidden: vec![8, 8],
            batch_size: 8,
            buffer_capacity: 500,
            target_sync: 20,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn protocol_counts_and_determinism() {
        let frame = trending(80);
        let cfg = tiny_cfg();
        let a = train(|_| pair(&frame), &cfg).unwrap();
        assert_eq!(a.len(), 2);
        assert_ne!(a[0].0.seed, a[1].0.seed);
        assert_eq!(a[0].0.train_sr.len(), 3);
        assert!(a.iter().all(|(r, _)| r.q_traces.iter().all(|q| q.q_long.is_finite() && q.q_short.is_finite())));
        let b = train(|_| pair(&frame), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn env_errors_carry_run_index() {
        let frame = trending(80);
        let err = train(
            |i| if i == 1 { Err(EnvError::Data("gone".into())) } else { pair(&frame) },
            &tiny_cfg(),
        )
        .unwrap_err();
        assert!(matches!(err, AgentError::Run { run: 1, .. }), "{err:?}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let frame = trending(80);
        let cfg = tiny_cfg();
        let (rec, ck) = train_run(0, pair(&frame).unwrap(), &cfg).unwrap();
        let json = serde_json::to_string(&ck).unwrap();
        let back: Checkpoint = serde_json::from_str(&json).unwrap();
        let agent = back.restore(&cfg).unwrap();
        let mut test = pair(&frame).unwrap().test;
        let again = evaluate_greedy(&agent, &mut test).unwrap();
        assert_eq!(again.equity_curve, rec.equity_curve);
        assert!(back.restore(&TrainConfig { gamma: 0.5, ..cfg }).is_err());
    }

    #[test]
    fn random_baseline_is_seeded() {
        let frame = trending(80);
        let mut env = pair(&frame).unwrap().test;
        let a = random_policy_srs(&mut env, 5, 11).unwrap();
        let b = random_policy_srs(&mut env, 5, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
    }
}
