//! Prompt rendering, news anonymization, completion backends and token
//! accounting.
//!
//! Backends implement [`CompletionBackend`]. [`Gateway`] wraps one backend
//! with a concurrency limit, optional rate limiting, a usage ledger and an
//! in-memory transcript log that [`ReplayBackend`] can read back.

mod anonymize;
mod http;
mod ledger;
mod news;
mod replay;
mod strategist;
mod stub;
mod template;

use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::signal::{SignalError, TokenDistribution};

pub use anonymize::{audit_prompt, find_dates, mask_dates, relative_marker, AnonymizedText, Anonymizer};
pub use http::{HttpBackend, HttpConfig, HttpResponse, Transport, UreqTransport};
pub use ledger::{LedgerRow, UsageLedger, UsageTotals};
pub use news::{aggregate_news, parse_analyst_response, NewsFactor, NewsSummary, FACTORS_PER_RESPONSE};
pub use replay::{prompt_digest, read_transcripts, write_transcripts, ReplayBackend, Transcript};
pub use strategist::{
    block_starts, strategist_context, ContextOptions, GeneratedStrategy, PriorStrategy, StrategistRun, StrategyGenerator,
    DEFAULT_OBJECTIVES, DEFAULT_PERSONA,
};
pub use stub::{
    entropy_target_distribution, tokenize, ScriptedStrategy, StubBackend, ANALYST_MARKER, JUDGE_MARKER, TEMPLATE_CLOSE, TEMPLATE_OPEN, WRITER_MARKER,
};
pub use template::{known_placeholders, render_analyst_prompt, PromptContext, PromptTemplate, PromptVersion, ANALYST_TEMPLATE, NOT_AVAILABLE};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GatewayError {
    #[error("template error: {0}")]
    Template(String),
    #[error("argument error: {0}")]
    Argument(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("provider returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed provider response ({message}); body: {body}")]
    Malformed { message: String, body: String },
    #[error("anonymization audit found {0:?}")]
    Audit(Vec<String>),
    #[error("replay error: {0}")]
    Replay(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// Sampling parameters sent with every request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompletionParams {
    pub temperature: f64,
    pub seed: u64,
    pub frequency_penalty: f64,
    pub presence_penalty: f64,
    pub max_tokens: u32,
}

impl CompletionParams {
    /// Exploratory sampling used while tuning prompts.
    pub const TUNING: CompletionParams = CompletionParams {
        temperature: 0.7,
        seed: 49,
        frequency_penalty: 1.0,
        presence_penalty: 0.25,
        max_tokens: 1024,
    };

    /// Deterministic settings for strategy generation.
    pub const GENERATION: CompletionParams = CompletionParams {
        temperature: 0.0,
        seed: 49,
        frequency_penalty: 0.0,
        presence_penalty: 0.0,
        max_tokens: 1024,
    };
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    /// One distribution per generated token; empty if the provider gave none.
    pub tokens: Vec<TokenDistribution>,
    pub usage: Usage,
}

impl CompletionResult {
    pub fn token_logprobs(&self) -> Vec<f64> {
        self.tokens.iter().map(|t| t.logprob).collect()
    }
}

pub trait CompletionBackend: Send + Sync {
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<CompletionResult, GatewayError>;

    fn name(&self) -> &str;
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for Arc<B> {
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<CompletionResult, GatewayError> {
        (**self).complete(prompt, params)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

/// A gateway bound to one ledger key, usable wherever a backend is expected.
pub struct Metered<'a> {
    pub gateway: &'a Gateway,
    pub key: UsageKey,
}

impl CompletionBackend for Metered<'_> {
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<CompletionResult, GatewayError> {
        self.gateway.complete(&self.key, prompt, params)
    }

    fn name(&self) -> &str {
        self.gateway.backend_name()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub max_concurrency: usize,
    /// `None` disables rate limiting.
    pub requests_per_second: Option<f64>,
    /// Requests allowed in a burst before the rate applies.
    pub burst: u32,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            max_concurrency: 4,
            requests_per_second: None,
            burst: 1,
        }
    }
}

/// Ledger key for one call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageKey {
    pub instrument: String,
    pub prompt_version: String,
}

impl UsageKey {
    pub fn new(instrument: impl Into<String>, prompt_version: impl Into<String>) -> Self {
        UsageKey {
            instrument: instrument.into(),
            prompt_version: prompt_version.into(),
        }
    }
}

struct TokenBucket {
    tokens: f64,
    capacity: f64,
    rate: f64,
    last: Instant,
}

impl TokenBucket {
    /// Time to wait before a token is available, consuming it if none.
    fn take(&mut self) -> Option<Duration> {
        let now = Instant::now();
        self.tokens = (self.tokens + now.duration_since(self.last).as_secs_f64() * self.rate).min(self.capacity);
        self.last = now;
        if self.tokens >= 1.0 {
            self.tokens -= 1.0;
            None
        } else {
            Some(Duration::from_secs_f64((1.0 - self.tokens) / self.rate))
        }
    }
}

/// Thread-safe front end over a backend.
pub struct Gateway {
    backend: Box<dyn CompletionBackend>,
    cfg: GatewayConfig,
    in_flight: Mutex<usize>,
    slot_free: Condvar,
    bucket: Option<Mutex<TokenBucket>>,
    ledger: Mutex<UsageLedger>,
    transcripts: Mutex<Vec<Transcript>>,
}

impl Gateway {
    pub fn new(backend: impl CompletionBackend + 'static, cfg: GatewayConfig) -> Result<Self, GatewayError> {
        if cfg.max_concurrency == 0 {
            return Err(GatewayError::Argument("max_concurrency must be at least 1".into()));
        }
        let bucket = match cfg.requests_per_second {
            Some(r) if r > 0.0 => Some(Mutex::new(TokenBucket {
                tokens: cfg.burst.max(1) as f64,
                capacity: cfg.burst.max(1) as f64,
                rate: r,
                last: Instant::now(),
            })),
            Some(r) => return Err(GatewayError::Argument(format!("requests_per_second {r} must be positive"))),
            None => None,
        };
        Ok(Gateway {
            backend: Box::new(backend),
            cfg,
            in_flight: Mutex::new(0),
            slot_free: Condvar::new(),
            bucket,
            ledger: Mutex::new(UsageLedger::new()),
            transcripts: Mutex::new(Vec::new()),
        })
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    pub fn complete(
        &self,
        key: &UsageKey,
        prompt: &str,
        params: &CompletionParams,
    ) -> Result<CompletionResult, GatewayError> {
        {
            let mut n = self.in_flight.lock().expect("gateway lock");
            while *n >= self.cfg.max_concurrency {
                n = self.slot_free.wait(n).expect("gateway lock");
            }
            *n += 1;
        }
        if let Some(bucket) = &self.bucket {
            loop {
                let wait = bucket.lock().expect("bucket lock").take();
                match wait {
                    None => break,
                    Some(d) => std::thread::sleep(d),
                }
            }
        }
        let result = self.backend.complete(prompt, params);
        {
            let mut n = self.in_flight.lock().expect("gateway lock");
            *n -= 1;
            self.slot_free.notify_one();
        }
        let result = result?;
        self.ledger
            .lock()
            .expect("ledger lock")
            .record(&key.instrument, &key.prompt_version, &result.usage);
        self.transcripts.lock().expect("transcript lock").push(Transcript {
            prompt_sha256: prompt_digest(prompt),
            seed: params.seed,
            instrument: key.instrument.clone(),
            prompt_version: key.prompt_version.clone(),
            result: result.clone(),
        });
        Ok(result)
    }

    pub fn ledger(&self) -> UsageLedger {
        self.ledger.lock().expect("ledger lock").clone()
    }

    pub fn transcripts(&self) -> Vec<Transcript> {
        self.transcripts.lock().expect("transcript lock").clone()
    }
}
