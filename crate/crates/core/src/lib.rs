//! Hybrid LLM-guided reinforcement learning for single-asset trading.
//!
//! Monthly strategies produced by a language model are reduced to one
//! uncertainty-weighted scalar, `tau`, which is appended to the observation
//! of a double-DQN agent. The crate carries the whole supporting pipeline:
//!
//! - [`ingest`] and [`frame`]: OHLCV / macro / news loading and timestamp alignment
//! - [`features`]: rolling technical indicators
//! - [`labeler`]: hindsight expert-trade labels for prompt exemplars
//! - [`signal`]: strategy parsing, perplexity, truncated entropy, `tau`
//! - [`gateway`]: prompt templates, anonymization, completion backends, token accounting
//! - [`tuner`]: writer/judge prompt refinement driven by a regret heuristic
//! - [`env`]: the discrete LONG/SHORT trading environment
//! - [`agent`]: the double-DQN learner and the multi-run training protocol
//! - [`eval`]: Sharpe ratio, drawdown, t-tests and comparison reports

pub mod agent;
pub mod direction;
pub mod env;
pub mod eval;
pub mod features;
pub mod frame;
pub mod gateway;
pub mod ingest;
pub mod labeler;
pub mod signal;
pub mod tuner;

pub use direction::Direction;
pub use frame::FeatureFrame;
