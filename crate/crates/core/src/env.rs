//! Single-asset trading environment with discrete LONG/SHORT actions.
//!
//! Each step trades at the decision bar's close, then marks the book to the
//! next close:
//!
//! ```text
//! equity(t+1) = equity(t) + shares(t) * (close(t+1) - close(t)) - cost(t)
//! cost(t)     = cost_rate * |shares traded| * close(t)
//! ```
//!
//! LONG targets the largest whole-share long position and SHORT the largest
//! short position whose notional stays within `leverage_cap * equity` after
//! costs. Repeating the current side leaves the position alone unless the cap
//! is breached, in which case shares are bought back (or sold) down to the
//! cap. The observation is a window of price-relative market features, the
//! current position sign and one guidance slot `tau`.

use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::direction::Direction;
use crate::frame::FeatureFrame;
use crate::signal::{SignalFeature, SignalMode};

/// Strategy cadence in bars.
pub const BLOCK_LEN: usize = 20;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("data error: {0}")]
    Data(String),
    #[error("argument error: {0}")]
    Argument(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("schedule error: {0}")]
    Schedule(String),
    #[error("config error: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    #[default]
    Simple,
    Log,
}

/// Market columns placed in each observation row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObsFeatures {
    #[default]
    Ohlcv,
    Close,
}

impl ObsFeatures {
    fn columns(self) -> &'static [&'static str] {
        match self {
            ObsFeatures::Ohlcv => &["Open", "High", "Low", "Close", "Volume"],
            ObsFeatures::Close => &["Close"],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    /// First decision date (inclusive). `None` starts at the first date with
    /// a full observation window.
    pub start: Option<NaiveDate>,
    /// Last bar of the episode (inclusive). `None` runs to the end of data.
    pub end: Option<NaiveDate>,
    pub initial_cash: f64,
    /// Fraction of traded notional charged per trade.
    pub cost_rate: f64,
    pub leverage_cap: f64,
    /// Bars per observation window.
    pub window: usize,
    pub features: ObsFeatures,
    pub reward: RewardKind,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            start: None,
            end: None,
            initial_cash: 10_000.0,
            cost_rate: 0.001,
            leverage_cap: 1.0,
            window: 30,
            features: ObsFeatures::Ohlcv,
            reward: RewardKind::Simple,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if !(self.cost_rate >= 0.0 && self.cost_rate < 1.0) {
            return Err(EnvError::Config(format!("cost_rate {} outside [0, 1)", self.cost_rate)));
        }
        if !(self.initial_cash > 0.0 && self.initial_cash.is_finite()) {
            return Err(EnvError::Config("initial_cash must be positive".into()));
        }
        if !(self.leverage_cap > 0.0 && self.leverage_cap * self.cost_rate < 1.0) {
            return Err(EnvError::Config(format!("leverage_cap {} is not usable", self.leverage_cap)));
        }
        if self.window < 2 {
            return Err(EnvError::Config("window must be at least 2 bars".into()));
        }
        Ok(())
    }

    /// Length of the observation vector.
    pub fn observation_dim(&self) -> usize {
        self.window * self.features.columns().len() + 2
    }
}

/// Agent-facing state: market window, position sign, then `tau` last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tau(&self) -> f64 {
        self.0[self.0.len() - 1]
    }

    pub fn position(&self) -> f64 {
        self.0[self.0.len() - 2]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PortfolioState {
    pub cash: f64,
    /// Negative when short.
    pub shares: i64,
}

impl PortfolioState {
    pub fn equity(&self, price: f64) -> f64 {
        self.cash + self.shares as f64 * price
    }
}

/// Bookkeeping for one step, enough to replay the ledger independently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub date: NaiveDate,
    pub action: Direction,
    pub price: f64,
    pub next_price: f64,
    pub equity_before: f64,
    pub shares_before: i64,
    pub shares: i64,
    pub cash: f64,
    pub cost: f64,
    pub equity: f64,
    pub tau: f64,
    pub forced_cover: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// One row of the exported episode trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub date: NaiveDate,
    pub action: u8,
    pub price: f64,
    pub shares: i64,
    pub cash: f64,
    /// Equity marked at the next close.
    pub equity: f64,
    pub tau: f64,
    pub reward: f64,
}

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace_csv<R: std::io::Read>(reader: R) -> Result<Vec<TraceRow>, csv::Error> {
    csv::Reader::from_reader(reader).deserialize().collect()
}

#[derive(Debug, Clone)]
pub struct TradingEnv {
    cfg: EpisodeConfig,
    dates: Vec<NaiveDate>,
    /// Market columns in observation order; `close` is duplicated for trading.
    market: Vec<Vec<f64>>,
    close: Vec<f64>,
    start: usize,
    end: usize,
    tau: Vec<f64>,
    strength: Vec<f64>,
    t: usize,
    book: PortfolioState,
    done: bool,
    trace: Vec<TraceRow>,
    equity_curve: Vec<f64>,
}

impl TradingEnv {
    /// Validates the data range: every market value from the first window
    /// bar through `end` must be present.
    pub fn new(data: &FeatureFrame, cfg: EpisodeConfig) -> Result<Self, EnvError> {
        cfg.validate()?;
        let dates = data.index().to_vec();
        if dates.is_empty() {
            return Err(EnvError::Data("empty market data".into()));
        }
        let warmup = cfg.window - 1;
        let start = match cfg.start {
            Some(d) => dates
                .iter()
                .position(|x| *x >= d)
                .ok_or_else(|| EnvError::Data(format!("no data on or after start {d}")))?,
            None => warmup,
        };
        let end = match cfg.end {
            Some(d) => dates
                .iter()
                .rposition(|x| *x <= d)
                .ok_or_else(|| EnvError::Data(format!("no data on or before end {d}")))?,
            None => dates.len() - 1,
        };
        if start < warmup {
            return Err(EnvError::Data(format!(
                "start {} leaves {} bars of history; the observation window needs {}",
                dates.get(start).map(|d| d.to_string()).unwrap_or_default(),
                start,
                warmup
            )));
        }
        if end <= start {
            return Err(EnvError::Data("episode range has no step".into()));
        }
        let first = start - warmup;
        let mut market = Vec::new();
        for name in cfg.features.columns() {
            market.push(dense_column(data, name, first, end)?);
        }
        let close = dense_column(data, "Close", first, end)?;
        if let Some(i) = close.iter().position(|c| !(*c > 0.0)) {
            return Err(EnvError::Data(format!("non-positive close on {}", dates[first + i])));
        }
        // Re-base everything to `first` so indices start at 0.
        let dates = dates[first..=end].to_vec();
        let (start, end) = (start - first, end - first);
        let n = dates.len();
        let mut env = TradingEnv {
            book: PortfolioState {
                cash: cfg.initial_cash,
                shares: 0,
            },
            cfg,
            dates,
            market,
            close,
            start,
            end,
            tau: vec![0.0; n],
            strength: vec![0.0; n],
            t: start,
            done: false,
            trace: Vec::new(),
            equity_curve: Vec::new(),
        };
        env.reset();
        Ok(env)
    }

    /// Installs a guidance schedule: for each bar, the value of the most recent
    /// signal dated on or before it. Signals inside the episode must sit on
    /// 20-bar block starts counted from the episode start, and some signal must
    /// cover the first bar.
    pub fn attach_signals(&mut self, signals: &[SignalFeature], mode: SignalMode) -> Result<(), EnvError> {
        let n = self.dates.len();
        if mode == SignalMode::Off {
            self.tau = vec![0.0; n];
            self.strength = vec![0.0; n];
            return Ok(());
        }
        let mut sorted: Vec<&SignalFeature> = signals.iter().collect();
        sorted.sort_by_key(|s| s.date);
        if let Some(w) = sorted.windows(2).find(|w| w[0].date == w[1].date) {
            return Err(EnvError::Schedule(format!("two signals dated {}", w[0].date)));
        }
        let start_date = self.dates[self.start];
        let end_date = self.dates[self.end];
        for s in &sorted {
            if s.date < start_date || s.date > end_date {
                continue;
            }
            let idx = self
                .dates
                .binary_search(&s.date)
                .map_err(|_| EnvError::Schedule(format!("signal date {} is not a trading day", s.date)))?;
            if (idx - self.start) % BLOCK_LEN != 0 {
                return Err(EnvError::Schedule(format!(
                    "signal dated {} falls mid-block ({} bars after the episode start)",
                    s.date,
                    idx - self.start
                )));
            }
        }
        if !sorted.iter().any(|s| s.date <= start_date) {
            return Err(EnvError::Schedule(format!("no signal covers the episode start {start_date}")));
        }
        let mut tau = vec![0.0; n];
        let mut strength = vec![0.0; n];
        let mut j = 0;
        let mut current: Option<&SignalFeature> = None;
        for (i, d) in self.dates.iter().enumerate() {
            while j < sorted.len() && sorted[j].date <= *d {
                current = Some(sorted[j]);
                j += 1;
            }
            if i >= self.start {
                if let Some(s) = current {
                    let v = s.value(mode);
                    if !(-1.0..=1.0).contains(&v) || !v.is_finite() {
                        return Err(EnvError::Schedule(format!("signal value {v} outside [-1, 1]")));
                    }
                    tau[i] = v;
                    strength[i] = s.strength;
                }
            }
        }
        self.tau = tau;
        self.strength = strength;
        Ok(())
    }

    /// Back to all cash at the first decision bar.
    pub fn reset(&mut self) -> Observation {
        self.t = self.start;
        self.book = PortfolioState {
            cash: self.cfg.initial_cash,
            shares: 0,
        };
        self.done = false;
        self.trace.clear();
        self.equity_curve.clear();
        self.equity_curve.push(self.cfg.initial_cash);
        self.observation()
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.cfg
    }

    pub fn observation_dim(&self) -> usize {
        self.cfg.observation_dim()
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn portfolio(&self) -> PortfolioState {
        self.book
    }

    pub fn equity(&self) -> f64 {
        self.book.equity(self.close[self.t])
    }

    pub fn current_date(&self) -> NaiveDate {
        self.dates[self.t]
    }

    /// Number of decisions in a full episode.
    pub fn episode_len(&self) -> usize {
        self.end - self.start
    }

    /// `tau` for every bar of the episode, decision bars first to last.
    pub fn tau_schedule(&self) -> &[f64] {
        &self.tau[self.start..=self.end]
    }

    pub fn episode_dates(&self) -> &[NaiveDate] {
        &self.dates[self.start..=self.end]
    }

    pub fn episode_closes(&self) -> &[f64] {
        &self.close[self.start..=self.end]
    }

    /// Signal strength active on each episode bar (0 without guidance).
    pub fn strength_schedule(&self) -> &[f64] {
        &self.strength[self.start..=self.end]
    }

    pub fn trace(&self) -> &[TraceRow] {
        &self.trace
    }

    /// Equity at the start and after each step.
    pub fn equity_curve(&self) -> &[f64] {
        &self.equity_curve
    }

    /// Raw-integer entry point; anything but 0 or 1 is an argument error.
    pub fn step_raw(&mut self, action: usize) -> Result<StepOutcome, EnvError> {
        match Direction::from_index(action) {
            Some(d) => self.step(d),
            None => Err(EnvError::Argument(format!("action {action} outside {{0, 1}}"))),
        }
    }

    pub fn step(&mut self, action: Direction) -> Result<StepOutcome, EnvError> {
        if self.done {
            return Err(EnvError::Protocol("step called after the episode finished".into()));
        }
        let price = self.close[self.t];
        let equity_before = self.book.equity(price);
        let shares_before = self.book.shares;
        let (target, forced_cover) = self.target_shares(action, price, equity_before);
        let traded = (target - shares_before).unsigned_abs() as f64;
        let cost = self.cfg.cost_rate * traded * price;
        self.book.cash -= (target - shares_before) as f64 * price + cost;
        self.book.shares = target;

        let date = self.dates[self.t];
        let tau = self.tau[self.t];
        self.t += 1;
        let next_price = self.close[self.t];
        let equity = self.book.equity(next_price);
        let bankrupt = equity <= 0.0;
        let simple = equity / equity_before - 1.0;
        let reward = match self.cfg.reward {
            RewardKind::Simple => simple,
            RewardKind::Log if !bankrupt => (equity / equity_before).ln(),
            RewardKind::Log => simple,
        };
        self.done = bankrupt || self.t == self.end;
        self.equity_curve.push(equity);
        self.trace.push(TraceRow {
            date,
            action: action.index() as u8,
            price,
            shares: target,
            cash: self.book.cash,
            equity,
            tau,
            reward,
        });
        Ok(StepOutcome {
            observation: self.observation(),
            reward,
            done: self.done,
            info: StepInfo {
                date,
                action,
                price,
                next_price,
                equity_before,
                shares_before,
                shares: target,
                cash: self.book.cash,
                cost,
                equity,
                tau,
                forced_cover,
            },
        })
    }

    fn target_shares(&self, action: Direction, price: f64, equity: f64) -> (i64, bool) {
        let cap = self.cfg.leverage_cap;
        let c = self.cfg.cost_rate;
        let cur = self.book.shares;
        let side = action.sign() as i64;
        if cur != 0 && cur.signum() == side {
            // Hold, unless the position has outgrown the cap.
            if (cur.unsigned_abs() as f64) * price <= cap * equity {
                return (cur, false);
            }
            let held = cur.unsigned_abs() as f64;
            let m = (cap * (equity - c * held * price) / (price * (1.0 - cap * c))).floor().max(0.0);
            let m = (m as i64).min(cur.abs());
            return (side * m, true);
        }
        let budget = cap * (equity - c * cur.unsigned_abs() as f64 * price);
        let m = (budget / (price * (1.0 + cap * c))).floor().max(0.0) as i64;
        (side * m, false)
    }

    fn observation(&self) -> Observation {
        let w = self.cfg.window;
        let first = self.t + 1 - w;
        let mut v = Vec::with_capacity(self.cfg.observation_dim());
        for col in &self.market {
            let base = col[first];
            for x in &col[first..=self.t] {
                v.push(if base > 0.0 { x / base - 1.0 } else { 0.0 });
            }
        }
        v.push(self.book.shares.signum() as f64);
        v.push(self.tau[self.t]);
        Observation(v)
    }
}

fn dense_column(data: &FeatureFrame, name: &str, first: usize, end: usize) -> Result<Vec<f64>, EnvError> {
    let col = data
        .column(name)
        .ok_or_else(|| EnvError::Data(format!("market data lacks column {name:?}")))?;
    col[first..=end]
        .iter()
        .enumerate()
        .map(|(i, v)| {
            v.filter(|x| x.is_finite())
                .ok_or_else(|| EnvError::Data(format!("missing {name} bar on {}", data.index()[first + i])))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Bar, BarSeries};

    fn frame(closes: &[f64]) -> FeatureFrame {
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        BarSeries::new(
            closes
                .iter()
                .enumerate()
                .map(|(i, &c)| Bar {
                    date: start + chrono::Days::new(i as u64),
                    open: c,
                    high: c,
                    low: c,
                    close: c,
                    volume: 100.0,
                })
                .collect(),
        )
        .unwrap()
        .to_frame()
    }

    fn cfg(window: usize, cost: f64) -> EpisodeConfig {
        EpisodeConfig {
            window,
            cost_rate: cost,
            ..EpisodeConfig::default()
        }
    }

    #[test]
    fn reset_contract() {
        let mut env = TradingEnv::new(&frame(&[100.0; 40]), cfg(30, 0.001)).unwrap();
        let obs = env.reset();
        assert_eq!(obs.len(), 30 * 5 + 2);
        assert_eq!(env.equity(), 10_000.0);
        assert_eq!(obs.tau(), 0.0);
        assert!(obs.is_finite());
    }

    #[test]
    fn missing_bar_is_data_error() {
        let mut f = frame(&[100.0; 40]);
        let mut close: Vec<Option<f64>> = f.column("Close").unwrap().to_vec();
        close[35] = None;
        f.insert("Close", close).unwrap();
        assert!(matches!(TradingEnv::new(&f, cfg(30, 0.001)), Err(EnvError::Data(_))));
    }

    #[test]
    fn hold_long_one_percent_move() {
        let mut closes = vec![100.0; 5];
        closes.extend([101.0, 102.01]);
        let mut env = TradingEnv::new(&frame(&closes), cfg(5, 0.0)).unwrap();
        env.reset();
        let first = env.step(Direction::Long).unwrap();
        assert_eq!(first.info.shares, 100);
        let second = env.step(Direction::Long).unwrap();
        assert_eq!(second.info.cost, 0.0);
        assert_eq!(second.info.shares, second.info.shares_before);
        assert!((second.reward - 0.01).abs() < 1e-12, "{}", second.reward);
    }

    #[test]
    fn flip_charges_both_legs() {
        let c = 0.001;
        let closes = vec![100.0; 8];
        let mut env = TradingEnv::new(&frame(&closes), cfg(3, c)).unwrap();
        env.reset();
        env.step(Direction::Long).unwrap();
        let before = env.equity();
        let long_shares = env.portfolio().shares;
        let flip = env.step(Direction::Short).unwrap();
        let short_shares = -flip.info.shares;
        assert!(short_shares > 0);
        let expected = c * (long_shares + short_shares) as f64 * 100.0;
        assert!((flip.info.cost - expected).abs() < 1e-9);
        // flat prices: the whole equity change is the cost
        assert!((before - flip.info.equity - expected).abs() < 1e-9);
        assert!(short_shares as f64 * 100.0 <= flip.info.equity + 1e-9);
    }

    #[test]
    fn done_at_last_bar_and_protocol_errors() {
        let mut env = TradingEnv::new(&frame(&[100.0, 101.0, 102.0, 103.0]), cfg(2, 0.0)).unwrap();
        env.reset();
        assert!(!env.step(Direction::Long).unwrap().done);
        assert!(env.step(Direction::Long).unwrap().done);
        assert!(matches!(env.step(Direction::Long), Err(EnvError::Protocol(_))));
        env.reset();
        assert!(matches!(env.step_raw(2), Err(EnvError::Argument(_))));
    }

    fn signal(date: NaiveDate, dir: Direction, likert: u8) -> SignalFeature {
        SignalFeature::new(date, dir, likert, 0.0).unwrap()
    }

    #[test]
    fn three_monthly_signals_give_three_levels() {
        let f = frame(&[100.0; 65]);
        let mut env = TradingEnv::new(&f, cfg(5, 0.0)).unwrap();
        let d = f.index();
        let start = 4;
        let sigs = [
            signal(d[start], Direction::Long, 3),
            signal(d[start + 20], Direction::Short, 2),
            signal(d[start + 40], Direction::Long, 1),
        ];
        env.attach_signals(&sigs, SignalMode::Tau).unwrap();
        let sched = env.tau_schedule();
        let mut levels: Vec<f64> = sched.to_vec();
        levels.dedup();
        assert_eq!(levels.len(), 3);
        assert!(sched[..20].iter().all(|v| *v == 1.0));
    }

    #[test]
    fn schedule_errors() {
        let f = frame(&[100.0; 65]);
        let d = f.index().to_vec();
        let mut env = TradingEnv::new(&f, cfg(5, 0.0)).unwrap();
        let mid = [signal(d[4], Direction::Long, 3), signal(d[14], Direction::Long, 3)];
        assert!(matches!(env.attach_signals(&mid, SignalMode::Tau), Err(EnvError::Schedule(_))));
        let late = [signal(d[24], Direction::Long, 3)];
        assert!(matches!(env.attach_signals(&late, SignalMode::Tau), Err(EnvError::Schedule(_))));
        let single = [signal(d[4], Direction::Short, 2)];
        env.attach_signals(&single, SignalMode::Tau).unwrap();
        assert!(env.tau_schedule().iter().all(|v| *v == -2.0 / 3.0));
    }

    #[test]
    fn forced_cover_when_short_outgrows_cap() {
        let mut closes = vec![100.0; 3];
        closes.extend([130.0, 130.0, 130.0]);
        let mut env = TradingEnv::new(&frame(&closes), cfg(3, 0.0)).unwrap();
        env.reset();
        let open = env.step(Direction::Short).unwrap();
        assert_eq!(open.info.shares, -100);
        let hold = env.step(Direction::Short).unwrap();
        assert!(hold.info.forced_cover);
        assert!(hold.info.shares > -100);
        assert!((hold.info.shares.abs() as f64) * 130.0 <= hold.info.equity_before + 1e-9);
    }
}
