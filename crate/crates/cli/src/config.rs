//! Flat dotted-key JSON configuration.
//!
//! A config file is one JSON object whose keys look like `agent.gamma` or
//! `macro.GDP.path`. `--set key=value` overrides are applied on top; a value
//! that parses as JSON is taken as such, anything else as a string. Every key
//! read while building [`RunConfig`] is recorded with its effective value so
//! the manifest can reproduce the run, and unread keys are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use serde_json::Value;

use guidedrl::agent::{Optimizer, TrainConfig};
use guidedrl::env::{EpisodeConfig, ObsFeatures, RewardKind};
use guidedrl::eval::Pairing;
use guidedrl::features::{IndicatorConfig, MacdConfig};
use guidedrl::frame::Frequency;
use guidedrl::gateway::{GatewayConfig, HttpConfig, PromptVersion};
use guidedrl::ingest::AlignPolicy;
use guidedrl::signal::SignalMode;

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    values: BTreeMap<String, Value>,
}

impl RawConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let v: Value = serde_json::from_str(text).map_err(|e| CliError::Usage(format!("config is not valid JSON: {e}")))?;
        let Value::Object(map) = v else {
            return Err(CliError::Usage("config must be a JSON object of dotted keys".into()));
        };
        let mut values = BTreeMap::new();
        for (k, v) in map {
            if v.is_object() {
                return Err(CliError::Usage(format!("config key {k:?} holds an object; use flat dotted keys")));
            }
            values.insert(k, v);
        }
        Ok(RawConfig { values })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Applies one `key=value` override.
    pub fn set(&mut self, assignment: &str) -> Result<(), CliError> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("override {assignment:?} is not key=value")))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(CliError::Usage(format!("override {assignment:?} has an empty key")));
        }
        let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
        self.values.insert(k.to_string(), value);
        Ok(())
    }

    pub fn insert(&mut self, key: &str, value: Value) {
        self.values.insert(key.to_string(), value);
    }
}

/// Tracks which keys were read and what each resolved to.
struct Reader {
    values: BTreeMap<String, Value>,
    resolved: BTreeMap<String, Value>,
}

fn usage<T>(msg: String) -> Result<T, CliError> {
    Err(CliError::Usage(msg))
}

impl Reader {
    fn take(&mut self, key: &str) -> Option<Value> {
        self.values.remove(key).filter(|v| !v.is_null())
    }

    fn record(&mut self, key: &str, v: Value) {
        self.resolved.insert(key.to_string(), v);
    }

    fn string(&mut self, key: &str, default: &str) -> Result<String, CliError> {
        let s = self.opt_string(key)?.unwrap_or_else(|| default.to_string());
        self.record(key, Value::String(s.clone()));
        Ok(s)
    }

    fn opt_string(&mut self, key: &str) -> Result<Option<String>, CliError> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::String(s)) => {
                self.record(key, Value::String(s.clone()));
                Ok(Some(s))
            }
            Some(Value::Number(n)) => {
                self.record(key, Value::String(n.to_string()));
                Ok(Some(n.to_string()))
            }
            Some(other) => usage(format!("{key} must be a string, got {other}")),
        }
    }

    fn parsed<T: FromStr>(&mut self, key: &str, default: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let s = self.string(key, default)?;
        s.parse().map_err(|e| CliError::Usage(format!("{key}: {e}")))
    }

    fn f64(&mut self, key: &str, default: f64) -> Result<f64, CliError> {
        let v = match self.take(key) {
            None => default,
            Some(Value::Number(n)) => n.as_f64().expect("JSON numbers convert to f64"),
            Some(Value::String(s)) => s.parse().map_err(|_| CliError::Usage(format!("{key} must be a number, got {s:?}")))?,
            Some(other) => return usage(format!("{key} must be a number, got {other}")),
        };
        self.record(key, serde_json::json!(v));
        Ok(v)
    }

    fn opt_f64(&mut self, key: &str) -> Result<Option<f64>, CliError> {
        if self.values.get(key).is_none_or(Value::is_null) {
            self.values.remove(key);
            self.record(key, Value::Null);
            return Ok(None);
        }
        self.f64(key, 0.0).map(Some)
    }

    fn u64(&mut self, key: &str, default: u64) -> Result<u64, CliError> {
        let v = match self.take(key) {
            None => default,
            Some(Value::Number(n)) => n
                .as_u64()
                .ok_or_else(|| CliError::Usage(format!("{key} must be a non-negative integer, got {n}")))?,
            Some(Value::String(s)) => s
                .parse()
                .map_err(|_| CliError::Usage(format!("{key} must be a non-negative integer, got {s:?}")))?,
            Some(other) => return usage(format!("{key} must be an integer, got {other}")),
        };
        self.record(key, serde_json::json!(v));
        Ok(v)
    }

    fn usize(&mut self, key: &str, default: usize) -> Result<usize, CliError> {
        Ok(self.u64(key, default as u64)? as usize)
    }

    fn opt_u64(&mut self, key: &str) -> Result<Option<u64>, CliError> {
        if self.values.get(key).is_none_or(Value::is_null) {
            self.values.remove(key);
            self.record(key, Value::Null);
            return Ok(None);
        }
        self.u64(key, 0).map(Some)
    }

    fn bool(&mut self, key: &str, default: bool) -> Result<bool, CliError> {
        let v = match self.take(key) {
            None => default,
            Some(Value::Bool(b)) => b,
            Some(Value::String(s)) if s == "true" || s == "false" => s == "true",
            Some(other) => return usage(format!("{key} must be true or false, got {other}")),
        };
        self.record(key, Value::Bool(v));
        Ok(v)
    }

    fn usize_list(&mut self, key: &str, default: &[usize]) -> Result<Vec<usize>, CliError> {
        let v: Vec<usize> = match self.take(key) {
            None => default.to_vec(),
            Some(Value::Array(items)) => items
                .iter()
                .map(|i| i.as_u64().map(|x| x as usize))
                .collect::<Option<_>>()
                .ok_or_else(|| CliError::Usage(format!("{key} must list non-negative integers")))?,
            Some(Value::String(s)) => s
                .split(',')
                .map(|p| p.trim().parse())
                .collect::<Result<_, _>>()
                .map_err(|_| CliError::Usage(format!("{key} must be a comma-separated integer list, got {s:?}")))?,
            Some(other) => return usage(format!("{key} must be an integer list, got {other}")),
        };
        self.record(key, serde_json::json!(v));
        Ok(v)
    }

    fn string_list(&mut self, key: &str) -> Result<Vec<String>, CliError> {
        let v: Vec<String> = match self.take(key) {
            None => Vec::new(),
            Some(Value::Array(items)) => items
                .iter()
                .map(|i| i.as_str().map(str::to_string))
                .collect::<Option<_>>()
                .ok_or_else(|| CliError::Usage(format!("{key} must list strings")))?,
            Some(Value::String(s)) => s.split(',').map(|p| p.trim().to_string()).filter(|p| !p.is_empty()).collect(),
            Some(other) => return usage(format!("{key} must be a string list, got {other}")),
        };
        self.record(key, serde_json::json!(v));
        Ok(v)
    }

    fn date(&mut self, key: &str, default: Option<&str>) -> Result<Option<NaiveDate>, CliError> {
        match self.opt_string(key)?.or_else(|| default.map(str::to_string)) {
            None => {
                self.record(key, Value::Null);
                Ok(None)
            }
            Some(s) => {
                self.record(key, Value::String(s.clone()));
                NaiveDate::parse_from_str(&s, "%Y-%m-%d")
                .map(Some)
                .map_err(|_| CliError::Usage(format!("{key} must be a YYYY-MM-DD date, got {s:?}")))
            }
        }
    }

    fn serde_enum<T: serde::de::DeserializeOwned>(&mut self, key: &str, default: &str) -> Result<T, CliError> {
        let s = self.string(key, default)?;
        serde_json::from_value(Value::String(s.clone())).map_err(|_| CliError::Usage(format!("{key}: unknown value {s:?}")))
    }

    /// Keys `prefix.<name>.<field>` grouped by name.
    fn family(&mut self, prefix: &str) -> BTreeMap<String, Vec<String>> {
        let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let p = format!("{prefix}.");
        for k in self.values.keys() {
            if let Some(rest) = k.strip_prefix(&p) {
                match rest.rsplit_once('.') {
                    Some((name, field)) => out.entry(name.to_string()).or_default().push(field.to_string()),
                    None => {
                        out.entry(rest.to_string()).or_default();
                    }
                };
            }
        }
        out
    }

    /// Keys `prefix.<name>` mapped to string values.
    fn string_map(&mut self, prefix: &str) -> Result<BTreeMap<String, String>, CliError> {
        let p = format!("{prefix}.");
        let keys: Vec<String> = self.values.keys().filter(|k| k.starts_with(&p)).cloned().collect();
        let mut out = BTreeMap::new();
        for k in keys {
            let v = self.opt_string(&k)?.unwrap_or_default();
            out.insert(k[p.len()..].to_string(), v);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Stub,
    Http,
    Replay,
}

impl FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stub" => Ok(BackendKind::Stub),
            "http" => Ok(BackendKind::Http),
            "replay" => Ok(BackendKind::Replay),
            other => Err(format!("unknown backend {other:?}; expected stub, http or replay")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacroSpec {
    pub name: String,
    pub path: PathBuf,
    pub frequency: Frequency,
    /// Adds `<name>_Change`, the relative change over this many observations.
    pub pct_change: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneSettings {
    pub windows: usize,
    pub window_len: usize,
    pub t_max: usize,
    /// Stop after each repeat so the best prompt can be edited by hand.
    pub pause: bool,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub instrument: String,
    pub output: PathBuf,
    pub ohlcv: Option<PathBuf>,
    pub news: Option<PathBuf>,
    pub hitl_labels: Option<PathBuf>,
    pub macros: Vec<MacroSpec>,
    pub align: AlignPolicy,
    /// Entity alias -> neutral placeholder used when anonymizing news.
    pub entities: BTreeMap<String, String>,
    pub train_range: (Option<NaiveDate>, Option<NaiveDate>),
    pub oos_range: (Option<NaiveDate>, Option<NaiveDate>),
    pub prompt_version: PromptVersion,
    pub use_tuned_prompt: bool,
    pub missing_as_na: bool,
    pub persona: Option<String>,
    pub objectives: Option<String>,
    pub static_fields: BTreeMap<String, String>,
    pub backend: BackendKind,
    pub http: HttpConfig,
    pub replay_path: Option<PathBuf>,
    pub gateway: GatewayConfig,
    pub tau: SignalMode,
    pub condition: String,
    pub seed: u64,
    pub workers: usize,
    pub indicators: IndicatorConfig,
    pub env: EpisodeConfig,
    pub agent: TrainConfig,
    pub tune: TuneSettings,
    pub conditions: Vec<String>,
    pub pairing: Pairing,
    pub plot_run: usize,
    /// Every key with its effective value, defaults included.
    pub resolved: BTreeMap<String, Value>,
}

impl RunConfig {
    pub fn from_raw(raw: RawConfig) -> Result<Self, CliError> {
        let mut r = Reader {
            values: raw.values,
            resolved: BTreeMap::new(),
        };
        let instrument = r.string("instrument", "ASSET")?;
        if instrument.is_empty() || instrument.contains(['/', '\\']) {
            return usage(format!("instrument {instrument:?} is not a usable name"));
        }
        let output = PathBuf::from(r.string("output", "out")?);
        let ohlcv = r.opt_string("data.ohlcv")?.map(PathBuf::from);
        let news = r.opt_string("data.news")?.map(PathBuf::from);
        let hitl_labels = r.opt_string("data.hitl_labels")?.map(PathBuf::from);
        let align = r.serde_enum("data.align", "forward_fill")?;

        let mut macros = Vec::new();
        for (name, fields) in r.family("macro") {
            if let Some(f) = fields.iter().find(|f| !["path", "frequency", "pct_change"].contains(&f.as_str())) {
                return usage(format!("unknown key macro.{name}.{f}"));
            }
            let path = r
                .opt_string(&format!("macro.{name}.path"))?
                .ok_or_else(|| CliError::Usage(format!("macro.{name}.path is required")))?;
            let frequency = r.serde_enum(&format!("macro.{name}.frequency"), "monthly")?;
            let pct_change = r.opt_u64(&format!("macro.{name}.pct_change"))?.map(|v| v as usize);
            macros.push(MacroSpec {
                name,
                path: PathBuf::from(path),
                frequency,
                pct_change,
            });
        }
        let entities = r.string_map("entities")?;

        let train_range = (r.date("train.start", None)?, r.date("train.end", None)?);
        let oos_range = (r.date("oos.start", Some("2018-01-01"))?, r.date("oos.end", Some("2020-12-31"))?);
        if let (Some(a), Some(b)) = oos_range {
            if a > b {
                return usage("oos.start is after oos.end".into());
            }
        }
        if let (Some(te), Some(os)) = (train_range.1, oos_range.0) {
            if te >= os {
                return usage(format!("train.end {te} must precede oos.start {os}"));
            }
        }

        let prompt_version: PromptVersion = r.parsed("prompt.version", "P4")?;
        let use_tuned_prompt = r.bool("prompt.use_tuned", true)?;
        let missing_as_na = r.bool("prompt.missing_as_na", true)?;
        let persona = r.opt_string("prompt.persona")?;
        let objectives = r.opt_string("prompt.objectives")?;
        let static_fields = r.string_map("prompt.field")?;

        let backend: BackendKind = r.parsed("backend", "stub")?;
        let http_default = HttpConfig::default();
        let http = HttpConfig {
            endpoint: r.string("http.endpoint", &http_default.endpoint)?,
            model: r.string("http.model", &http_default.model)?,
            api_key_env: r.string("http.api_key_env", &http_default.api_key_env)?,
            max_retries: r.u64("http.max_retries", http_default.max_retries as u64)? as u32,
            base_delay_ms: r.u64("http.base_delay_ms", http_default.base_delay_ms)?,
            timeout_secs: r.u64("http.timeout_secs", http_default.timeout_secs)?,
        };
        let replay_path = r.opt_string("replay.transcripts")?.map(PathBuf::from);
        if backend == BackendKind::Replay && replay_path.is_none() {
            return usage("backend replay needs replay.transcripts".into());
        }
        let gateway = GatewayConfig {
            max_concurrency: r.usize("gateway.max_concurrency", 4)?,
            requests_per_second: r.opt_f64("gateway.requests_per_second")?,
            burst: r.u64("gateway.burst", 1)? as u32,
        };

        let tau: SignalMode = r.parsed("tau", "tau")?;
        let condition = r.string("condition", tau.as_str())?;
        if condition.is_empty() || condition.contains(['/', '\\']) {
            return usage(format!("condition {condition:?} is not a usable name"));
        }
        let seed = r.u64("seed", 0)?;
        let workers = r.usize("workers", 0)?;

        let ind = IndicatorConfig::default();
        let indicators = IndicatorConfig {
            sma_windows: r.usize_list("features.sma_windows", &ind.sma_windows)?,
            rsi_period: r.usize("features.rsi_period", ind.rsi_period)?,
            macd: MacdConfig {
                fast: r.usize("features.macd_fast", ind.macd.fast)?,
                slow: r.usize("features.macd_slow", ind.macd.slow)?,
                signal: r.usize("features.macd_signal", ind.macd.signal)?,
            },
            atr_period: r.usize("features.atr_period", ind.atr_period)?,
            rolling_window: r.usize("features.rolling_window", ind.rolling_window)?,
            slope_lookback: r.usize("features.slope_lookback", ind.slope_lookback)?,
        };

        let e = EpisodeConfig::default();
        let env = EpisodeConfig {
            start: None,
            end: None,
            initial_cash: r.f64("env.initial_cash", e.initial_cash)?,
            cost_rate: r.f64("env.cost_rate", e.cost_rate)?,
            leverage_cap: r.f64("env.leverage_cap", e.leverage_cap)?,
            window: r.usize("env.window", e.window)?,
            features: r.serde_enum::<ObsFeatures>("env.features", "ohlcv")?,
            reward: r.serde_enum::<RewardKind>("env.reward", "simple")?,
        };

        let a = TrainConfig::default();
        let optimizer = match r.string("agent.optimizer", "adam")?.as_str() {
            "adam" => Optimizer::default(),
            "sgd" => Optimizer::Sgd,
            other => return usage(format!("agent.optimizer: unknown optimizer {other:?}; expected adam or sgd")),
        };
        let agent = TrainConfig {
            runs: r.usize("agent.runs", a.runs)?,
            episodes_per_run: r.usize("agent.episodes", a.episodes_per_run)?,
            gamma: r.f64("agent.gamma", a.gamma)?,
            learning_rate: r.f64("agent.learning_rate", a.learning_rate)?,
            batch_size: r.usize("agent.batch_size", a.batch_size)?,
            buffer_capacity: r.usize("agent.buffer_capacity", a.buffer_capacity)?,
            target_sync: r.u64("agent.target_sync", a.target_sync)?,
            epsilon_start: r.f64("agent.epsilon_start", a.epsilon_start)?,
            epsilon_end: r.f64("agent.epsilon_end", a.epsilon_end)?,
            epsilon_decay_steps: r.opt_u64("agent.epsilon_decay_steps")?,
            hidden: r.usize_list("agent.hidden", &a.hidden)?,
            grad_clip: r.f64("agent.grad_clip", a.grad_clip)?,
            optimizer,
            base_seed: seed,
        };

        let tune = TuneSettings {
            windows: r.usize("tune.windows", 5)?,
            window_len: r.usize("tune.window_len", guidedrl::tuner::WINDOW_LEN)?,
            t_max: r.usize("tune.t_max", guidedrl::tuner::DEFAULT_T_MAX)?,
            pause: r.bool("tune.pause", false)?,
        };
        let conditions = r.string_list("evaluate.conditions")?;
        let pairing = r.serde_enum("evaluate.pairing", "paired")?;
        let plot_run = r.usize("plot.run", 0)?;

        if let Some(k) = r.values.keys().next() {
            return usage(format!("unknown config key {k:?}"));
        }
        Ok(RunConfig {
            instrument,
            output,
            ohlcv,
            news,
            hitl_labels,
            macros,
            align,
            entities,
            train_range,
            oos_range,
            prompt_version,
            use_tuned_prompt,
            missing_as_na,
            persona,
            objectives,
            static_fields,
            backend,
            http,
            replay_path,
            gateway,
            tau,
            condition,
            seed,
            workers,
            indicators,
            env,
            agent,
            tune,
            conditions,
            pairing,
            plot_run,
            resolved: r.resolved,
        })
    }

    /// Training episode: ends on `train.end`, or the day before `oos.start`.
    pub fn train_episode(&self) -> EpisodeConfig {
        let end = self
            .train_range
            .1
            .or_else(|| self.oos_range.0.and_then(|d| d.pred_opt()));
        EpisodeConfig {
            start: self.train_range.0,
            end,
            ..self.env.clone()
        }
    }

    pub fn oos_episode(&self) -> EpisodeConfig {
        EpisodeConfig {
            start: self.oos_range.0,
            end: self.oos_range.1,
            ..self.env.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let cfg = RunConfig::from_raw(RawConfig::default()).unwrap();
        assert_eq!(cfg.instrument, "ASSET");
        assert_eq!(cfg.agent.runs, 25);
        assert_eq!(cfg.agent.episodes_per_run, 50);
        assert_eq!(cfg.prompt_version, PromptVersion::P4);
        assert_eq!(cfg.condition, "tau");
        assert_eq!(cfg.resolved["agent.gamma"], serde_json::json!(0.99));
    }

    #[test]
    fn overrides_and_types() {
        let mut raw = RawConfig::from_json(r#"{"agent.runs": 3, "tau": "off", "agent.hidden": "16,16"}"#).unwrap();
        raw.set("agent.gamma=0.5").unwrap();
        raw.set("instrument=XYZ").unwrap();
        raw.set("train.end=2017-12-29").unwrap();
        let cfg = RunConfig::from_raw(raw).unwrap();
        assert_eq!(cfg.agent.runs, 3);
        assert_eq!(cfg.agent.gamma, 0.5);
        assert_eq!(cfg.agent.hidden, vec![16, 16]);
        assert_eq!(cfg.tau, SignalMode::Off);
        assert_eq!(cfg.condition, "off");
        assert_eq!(cfg.instrument, "XYZ");
        assert_eq!(cfg.train_range.1, NaiveDate::from_ymd_opt(2017, 12, 29));
    }

    #[test]
    fn families() {
        let raw = RawConfig::from_json(
            r#"{"macro.GDP.path": "gdp.csv", "macro.GDP.frequency": "quarterly", "macro.GDP.pct_change": 1,
                "entities.Acme Corp": "the company", "prompt.field.classification": "Technology"}"#,
        )
        .unwrap();
        let cfg = RunConfig::from_raw(raw).unwrap();
        assert_eq!(cfg.macros.len(), 1);
        assert_eq!(cfg.macros[0].frequency, Frequency::Quarterly);
        assert_eq!(cfg.macros[0].pct_change, Some(1));
        assert_eq!(cfg.entities["Acme Corp"], "the company");
        assert_eq!(cfg.static_fields["classification"], "Technology");
    }

    #[test]
    fn usage_errors() {
        for bad in [
            r#"{"agent.gama": 0.9}"#,
            r#"{"tau": "maybe"}"#,
            r#"{"prompt.version": "P9"}"#,
            r#"{"agent.runs": "many"}"#,
            r#"{"agent": {"runs": 2}}"#,
            r#"{"train.end": "2019-01-01", "oos.start": "2018-01-01"}"#,
            r#"{"macro.GDP.frequency": "monthly"}"#,
            r#"{"backend": "replay"}"#,
        ] {
            let r = RawConfig::from_json(bad).and_then(RunConfig::from_raw);
            assert!(matches!(r, Err(CliError::Usage(_))), "{bad} -> {r:?}");
        }
        assert!(RawConfig::default().set("novalue").is_err());
    }
}
