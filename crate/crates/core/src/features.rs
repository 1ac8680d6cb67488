//! Rolling technical indicators over daily bars.
//!
//! Every indicator is causal: the value at index `t` only reads inputs at
//! indices `<= t`. Warm-up positions are `None`.

use serde::{Deserialize, Serialize};

use crate::frame::FeatureFrame;
use crate::ingest::BarSeries;

pub const TRADING_DAYS: f64 = 252.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FeatureError {
    #[error("window error: {indicator} needs more than {required} values, got {available}")]
    Window {
        indicator: String,
        required: usize,
        available: usize,
    },
    #[error("data error: {0}")]
    Data(String),
    #[error("invalid config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacdConfig {
    pub fast: usize,
    pub slow: usize,
    pub signal: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndicatorConfig {
    pub sma_windows: Vec<usize>,
    pub rsi_period: usize,
    pub macd: MacdConfig,
    pub atr_period: usize,
    pub rolling_window: usize,
    pub slope_lookback: usize,
}

impl Default for IndicatorConfig {
    fn default() -> Self {
        IndicatorConfig {
            sma_windows: vec![20, 50, 100, 200],
            rsi_period: 14,
            macd: MacdConfig {
                fast: 12,
                slow: 26,
                signal: 9,
            },
            atr_period: 14,
            rolling_window: 20,
            slope_lookback: 5,
        }
    }
}

impl IndicatorConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        let mut periods = vec![
            ("rsi_period", self.rsi_period),
            ("macd.fast", self.macd.fast),
            ("macd.slow", self.macd.slow),
            ("macd.signal", self.macd.signal),
            ("atr_period", self.atr_period),
            ("rolling_window", self.rolling_window),
            ("slope_lookback", self.slope_lookback),
        ];
        periods.extend(self.sma_windows.iter().map(|w| ("sma_windows", *w)));
        if let Some((name, p)) = periods.into_iter().find(|(_, p)| *p < 2) {
            return Err(FeatureError::Config(format!("{name} = {p}; periods must be >= 2")));
        }
        if self.macd.fast >= self.macd.slow {
            return Err(FeatureError::Config("macd.fast must be shorter than macd.slow".into()));
        }
        Ok(())
    }
}

/// Column name for an SMA of `window` bars, e.g. `20MA`.
pub fn sma_column(window: usize) -> String {
    format!("{window}MA")
}

/// Computes the indicator table. Columns: `Close`, `Volume`, `<n>MA`,
/// `<n>MA_Slope`, `RSI`, `MACD`, `Signal_Line`, `MACD_Strength`, `ATR`,
/// `HV_Close`, `VWAP`, plus `Close_ZScore`, `RSI_ZScore` and `ATR_ZScore`.
pub fn technical_indicators(bars: &BarSeries, cfg: &IndicatorConfig) -> Result<FeatureFrame, FeatureError> {
    cfg.validate()?;
    let n = bars.len();
    let mut requirements: Vec<(String, usize)> = cfg
        .sma_windows
        .iter()
        .map(|w| (format!("SMA({w})"), *w))
        .collect();
    requirements.push((format!("RSI({})", cfg.rsi_period), cfg.rsi_period));
    requirements.push((
        format!("MACD({},{},{})", cfg.macd.fast, cfg.macd.slow, cfg.macd.signal),
        cfg.macd.slow + cfg.macd.signal - 1,
    ));
    requirements.push((format!("ATR({})", cfg.atr_period), cfg.atr_period));
    requirements.push((format!("HV({})", cfg.rolling_window), cfg.rolling_window));
    if let Some((indicator, required)) = requirements.into_iter().find(|(_, r)| n <= *r) {
        return Err(FeatureError::Window {
            indicator,
            required,
            available: n,
        });
    }

    let closes = bars.closes();
    let highs: Vec<f64> = bars.bars().iter().map(|b| b.high).collect();
    let lows: Vec<f64> = bars.bars().iter().map(|b| b.low).collect();
    let volumes: Vec<f64> = bars.bars().iter().map(|b| b.volume).collect();

    let mut frame = FeatureFrame::new(bars.dates()).expect("bar dates are strictly increasing");
    let put = |frame: &mut FeatureFrame, name: &str, v: Vec<Option<f64>>| {
        frame.insert(name, v).expect("indicator output has index length");
    };
    put(&mut frame, "Close", closes.iter().copied().map(Some).collect());
    put(&mut frame, "Volume", volumes.iter().copied().map(Some).collect());
    for &w in &cfg.sma_windows {
        let ma = sma(&closes, w);
        put(&mut frame, &format!("{}_Slope", sma_column(w)), rolling_slope_sparse(&ma, cfg.slope_lookback));
        put(&mut frame, &sma_column(w), ma);
    }
    let rsi_v = rsi(&closes, cfg.rsi_period);
    let macd = macd(&closes, cfg.macd);
    let atr_v = atr(&highs, &lows, &closes, cfg.atr_period);
    put(&mut frame, "Close_ZScore", rolling_zscore(&closes, cfg.rolling_window));
    put(&mut frame, "RSI_ZScore", rolling_zscore_sparse(&rsi_v, cfg.rolling_window));
    put(&mut frame, "ATR_ZScore", rolling_zscore_sparse(&atr_v, cfg.rolling_window));
    put(&mut frame, "RSI", rsi_v);
    put(&mut frame, "MACD", macd.value);
    put(&mut frame, "Signal_Line", macd.signal);
    put(&mut frame, "MACD_Strength", macd.strength);
    put(&mut frame, "ATR", atr_v);
    put(&mut frame, "HV_Close", historical_volatility(&closes, cfg.rolling_window)?);
    put(&mut frame, "VWAP", vwap_proxy(bars, cfg.rolling_window));
    Ok(frame)
}

/// Simple moving average; defined from index `window - 1`.
pub fn sma(values: &[f64], window: usize) -> Vec<Option<f64>> {
    let mut out = vec![None; values.len()];
    if window == 0 || values.len() < window {
        return out;
    }
    for t in window - 1..values.len() {
        let sum: f64 = values[t + 1 - window..=t].iter().sum();
        out[t] = Some(sum / window as f64);
    }
    out
}

/// Exponential moving average seeded with the SMA of the first `period`
/// defined inputs.
fn ema_sparse(values: &[Option<f64>], period: usize) -> Vec<Option<f64>> {
    let mut out = vec![None; values.len()];
    let alpha = 2.0 / (period as f64 + 1.0);
    let Some(first) = values.iter().position(Option::is_some) else {
        return out;
    };
    if values.len() < first + period {
        return out;
    }
    let seed_end = first + period - 1;
    let seed: Vec<f64> = values[first..=seed_end].iter().map(|v| v.unwrap_or(f64::NAN)).collect();
    let mut prev = seed.iter().sum::<f64>() / period as f64;
    out[seed_end] = Some(prev);
    for t in seed_end + 1..values.len() {
        if let Some(x) = values[t] {
            // prev + alpha * (x - prev) keeps a constant input exactly fixed.
            prev += alpha * (x - prev);
        }
        out[t] = Some(prev);
    }
    out
}

/// Wilder RSI. Zero average gain and loss gives 50; zero loss with a
/// positive gain gives 100.
pub fn rsi(closes: &[f64], period: usize) -> Vec<Option<f64>> {
    let mut out = vec![None; closes.len()];
    if period == 0 || closes.len() <= period {
        return out;
    }
    let change = |t: usize| closes[t] - closes[t - 1];
    let (mut gain, mut loss) = (0.0, 0.0);
    for t in 1..=period {
        let c = change(t);
        if c > 0.0 {
            gain += c;
        } else {
            loss -= c;
        }
    }
    gain /= period as f64;
    loss /= period as f64;
    out[period] = Some(rsi_value(gain, loss));
    let p = period as f64;
    for (t, slot) in out.iter_mut().enumerate().skip(period + 1) {
        let c = change(t);
        gain = (gain * (p - 1.0) + c.max(0.0)) / p;
        loss = (loss * (p - 1.0) + (-c).max(0.0)) / p;
        *slot = Some(rsi_value(gain, loss));
    }
    out
}

fn rsi_value(avg_gain: f64, avg_loss: f64) -> f64 {
    if avg_loss == 0.0 {
        if avg_gain == 0.0 {
            50.0
        } else {
            100.0
        }
    } else {
        100.0 - 100.0 / (1.0 + avg_gain / avg_loss)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Macd {
    pub value: Vec<Option<f64>>,
    pub signal: Vec<Option<f64>>,
    /// `value - signal`.
    pub strength: Vec<Option<f64>>,
}

pub fn macd(closes: &[f64], cfg: MacdConfig) -> Macd {
    let dense: Vec<Option<f64>> = closes.iter().copied().map(Some).collect();
    let fast = ema_sparse(&dense, cfg.fast);
    let slow = ema_sparse(&dense, cfg.slow);
    let value: Vec<Option<f64>> = fast
        .iter()
        .zip(&slow)
        .map(|(f, s)| Some((*f)? - (*s)?))
        .collect();
    let signal = ema_sparse(&value, cfg.signal);
    let strength = value
        .iter()
        .zip(&signal)
        .map(|(v, s)| Some((*v)? - (*s)?))
        .collect();
    Macd { value, signal, strength }
}

/// Wilder ATR; the first value at index `period` is the mean true range of
/// bars `1..=period`.
pub fn atr(highs: &[f64], lows: &[f64], closes: &[f64], period: usize) -> Vec<Option<f64>> {
    let n = closes.len();
    let mut out = vec![None; n];
    if period == 0 || n <= period {
        return out;
    }
    let tr = |t: usize| {
        let hl = highs[t] - lows[t];
        if t == 0 {
            hl
        } else {
            hl.max((highs[t] - closes[t - 1]).abs()).max((lows[t] - closes[t - 1]).abs())
        }
    };
    let mut prev = (1..=period).map(tr).sum::<f64>() / period as f64;
    out[period] = Some(prev);
    let p = period as f64;
    for (t, slot) in out.iter_mut().enumerate().skip(period + 1) {
        prev = (prev * (p - 1.0) + tr(t)) / p;
        *slot = Some(prev);
    }
    out
}

/// Daily proxy for VWAP: rolling mean of typical price weighted by volume.
fn vwap_proxy(bars: &BarSeries, window: usize) -> Vec<Option<f64>> {
    let b = bars.bars();
    let mut out = vec![None; b.len()];
    if b.len() < window {
        return out;
    }
    for t in window - 1..b.len() {
        let slice = &b[t + 1 - window..=t];
        let vol: f64 = slice.iter().map(|x| x.volume).sum();
        if vol > 0.0 {
            let pv: f64 = slice.iter().map(|x| (x.high + x.low + x.close) / 3.0 * x.volume).sum();
            out[t] = Some(pv / vol);
        }
    }
    out
}

/// Least-squares slope of the last `lookback` values against their step index.
pub fn rolling_slope(series: &[f64], lookback: usize) -> Vec<Option<f64>> {
    let dense: Vec<Option<f64>> = series.iter().copied().map(Some).collect();
    rolling_slope_sparse(&dense, lookback)
}

/// As [`rolling_slope`]; a window containing a missing value yields missing.
pub fn rolling_slope_sparse(series: &[Option<f64>], lookback: usize) -> Vec<Option<f64>> {
    let mut out = vec![None; series.len()];
    if lookback < 2 || series.len() < lookback {
        return out;
    }
    let m = lookback as f64;
    let x_mean = (m - 1.0) / 2.0;
    let sxx: f64 = (0..lookback).map(|i| (i as f64 - x_mean).powi(2)).sum();
    for t in lookback - 1..series.len() {
        let window = &series[t + 1 - lookback..=t];
        let Some(ys) = window.iter().copied().collect::<Option<Vec<f64>>>() else {
            continue;
        };
        let y_mean = ys.iter().sum::<f64>() / m;
        let sxy: f64 = ys
            .iter()
            .enumerate()
            .map(|(i, y)| (i as f64 - x_mean) * (y - y_mean))
            .sum();
        out[t] = Some(sxy / sxx);
    }
    out
}

/// `(x[t] - mean) / std` over the trailing window with the sample standard
/// deviation. A window of identical values scores 0.
pub fn rolling_zscore(series: &[f64], window: usize) -> Vec<Option<f64>> {
    let dense: Vec<Option<f64>> = series.iter().copied().map(Some).collect();
    rolling_zscore_sparse(&dense, window)
}

pub fn rolling_zscore_sparse(series: &[Option<f64>], window: usize) -> Vec<Option<f64>> {
    let mut out = vec![None; series.len()];
    if window < 2 || series.len() < window {
        return out;
    }
    for t in window - 1..series.len() {
        let Some(xs) = series[t + 1 - window..=t].iter().copied().collect::<Option<Vec<f64>>>() else {
            continue;
        };
        if xs.iter().all(|x| *x == xs[0]) {
            out[t] = Some(0.0);
            continue;
        }
        let (mean, sd) = mean_sample_std(&xs);
        out[t] = Some(if sd == 0.0 { 0.0 } else { (xs[xs.len() - 1] - mean) / sd });
    }
    out
}

/// Percentage change over the past four 5-bar weeks, most recent first:
/// entry `k` (1-based) is `close[t - 5(k-1)] / close[t - 5k] - 1`.
pub fn weekly_past_returns(closes: &[f64], t: usize) -> Result<[f64; 4], FeatureError> {
    if t < 20 || t >= closes.len() {
        return Err(FeatureError::Window {
            indicator: "Weekly_Past_Returns".into(),
            required: 20,
            available: t.min(closes.len()),
        });
    }
    let mut out = [0.0; 4];
    for (k, slot) in out.iter_mut().enumerate() {
        let hi = t - 5 * k;
        let lo = t - 5 * (k + 1);
        *slot = closes[hi] / closes[lo] - 1.0;
    }
    Ok(out)
}

/// Annualized standard deviation of log returns over the trailing window;
/// defined from index `window`.
pub fn historical_volatility(closes: &[f64], window: usize) -> Result<Vec<Option<f64>>, FeatureError> {
    if window < 2 {
        return Err(FeatureError::Config("volatility window must be >= 2".into()));
    }
    if let Some(p) = closes.iter().position(|c| !(c.is_finite() && *c > 0.0)) {
        return Err(FeatureError::Data(format!("non-positive close at index {p}")));
    }
    let mut out = vec![None; closes.len()];
    if closes.len() <= window {
        return Ok(out);
    }
    let logret: Vec<f64> = closes.windows(2).map(|w| (w[1] / w[0]).ln()).collect();
    for t in window..closes.len() {
        // log return r[i] spans closes[i]..closes[i+1]
        let (_, sd) = mean_sample_std(&logret[t - window..t]);
        out[t] = Some(sd * TRADING_DAYS.sqrt());
    }
    Ok(out)
}

pub(crate) fn mean_sample_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
