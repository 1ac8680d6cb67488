//! Strategy parsing and the signal algebra that turns one strategy into the
//! scalar `tau` appended to the agent's observation.
//!
//! ```text
//! mu_conf  = likert / 3
//! C        = eps + (1 - eps) * (1 - H_norm)      eps = 0.01
//! strength = mu_conf * C
//! tau      = (2 * dir - 1) * strength
//! ```

use std::io::{Read, Write};
use std::str::FromStr;

use chrono::NaiveDate;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::direction::Direction;

/// Number of explicit alternatives kept per generated token.
pub const TOP_K: usize = 5;
/// Floor of the certainty term.
pub const CERTAINTY_FLOOR: f64 = 0.01;
pub const MAX_EXPLANATION_WORDS: usize = 350;
const DISTRIBUTION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SignalError {
    #[error("argument error: {0}")]
    Argument(String),
    #[error("validation error: {0}")]
    Validation(String),
}

/// How a strategy is reduced to the observation scalar. `Tau` is the full
/// form; the others are ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalMode {
    /// No guidance; the slot is held at 0.
    Off,
    /// Direction only, `+-1`.
    DirOnly,
    /// Direction times normalized Likert confidence, no entropy weighting.
    ConfDir,
    #[default]
    Tau,
}

impl SignalMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SignalMode::Off => "off",
            SignalMode::DirOnly => "dir_only",
            SignalMode::ConfDir => "conf_dir",
            SignalMode::Tau => "tau",
        }
    }
}

impl FromStr for SignalMode {
    type Err = SignalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "off" => Ok(SignalMode::Off),
            "dir_only" => Ok(SignalMode::DirOnly),
            "conf_dir" => Ok(SignalMode::ConfDir),
            "tau" => Ok(SignalMode::Tau),
            other => Err(SignalError::Argument(format!(
                "unknown signal mode {other:?}; expected off, dir_only, conf_dir or tau"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FeatureDirection {
    Long,
    Short,
    Neutral,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureUse {
    pub feature: String,
    pub direction: FeatureDirection,
    pub weight: u8,
}

/// One monthly strategy from the strategist model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Strategy {
    pub date: NaiveDate,
    pub direction: Direction,
    pub confidence_likert: u8,
    pub explanation: String,
    pub features_used: Vec<FeatureUse>,
}

#[derive(Deserialize)]
struct RawStrategy {
    action: Option<serde_json::Value>,
    action_confidence: Option<serde_json::Value>,
    explanation: Option<serde_json::Value>,
    features_used: Option<Vec<RawFeature>>,
}

#[derive(Deserialize)]
struct RawFeature {
    feature: Option<String>,
    direction: Option<String>,
    weight: Option<serde_json::Value>,
}

/// Parses and validates the strategist output block (`action`,
/// `action_confidence`, `explanation`, `features_used`). Surrounding prose or
/// code fences around the JSON object are ignored.
pub fn parse_strategy(payload: &str, date: NaiveDate) -> Result<Strategy, SignalError> {
    let json = extract_json_object(payload)
        .ok_or_else(|| SignalError::Validation("no JSON object in payload".into()))?;
    let raw: RawStrategy =
        serde_json::from_str(json).map_err(|e| SignalError::Validation(format!("malformed strategy JSON: {e}")))?;

    let action = raw
        .action
        .ok_or_else(|| SignalError::Validation("missing field \"action\"".into()))?;
    let direction = match action.as_str().map(str::trim) {
        Some("LONG") => Direction::Long,
        Some("SHORT") => Direction::Short,
        _ => {
            return Err(SignalError::Validation(format!(
                "action must be LONG or SHORT, got {action}"
            )))
        }
    };
    let conf = raw
        .action_confidence
        .ok_or_else(|| SignalError::Validation("missing field \"action_confidence\"".into()))?;
    let likert = likert_value(&conf)
        .ok_or_else(|| SignalError::Validation(format!("action_confidence must be 1, 2 or 3, got {conf}")))?;
    let explanation = match raw.explanation {
        Some(serde_json::Value::String(s)) => s,
        Some(other) => return Err(SignalError::Validation(format!("explanation must be text, got {other}"))),
        None => return Err(SignalError::Validation("missing field \"explanation\"".into())),
    };
    let words = explanation.split_whitespace().count();
    if words > MAX_EXPLANATION_WORDS {
        return Err(SignalError::Validation(format!(
            "explanation has {words} words; the limit is {MAX_EXPLANATION_WORDS}"
        )));
    }
    let raw_features = raw
        .features_used
        .ok_or_else(|| SignalError::Validation("missing field \"features_used\"".into()))?;
    let mut features_used = Vec::with_capacity(raw_features.len());
    for (i, f) in raw_features.into_iter().enumerate() {
        let feature = f
            .feature
            .ok_or_else(|| SignalError::Validation(format!("features_used[{i}] lacks \"feature\"")))?;
        let direction = match f.direction.as_deref().map(str::trim) {
            Some("LONG") => FeatureDirection::Long,
            Some("SHORT") => FeatureDirection::Short,
            Some("NEUTRAL") => FeatureDirection::Neutral,
            other => {
                return Err(SignalError::Validation(format!(
                    "features_used[{i}].direction must be LONG, SHORT or NEUTRAL, got {other:?}"
                )))
            }
        };
        let weight = f
            .weight
            .as_ref()
            .and_then(likert_value)
            .ok_or_else(|| SignalError::Validation(format!("features_used[{i}].weight must be 1, 2 or 3")))?;
        features_used.push(FeatureUse {
            feature,
            direction,
            weight,
        });
    }
    Ok(Strategy {
        date,
        direction,
        confidence_likert: likert,
        explanation,
        features_used,
    })
}

fn likert_value(v: &serde_json::Value) -> Option<u8> {
    let n = match v {
        serde_json::Value::Number(n) => n.as_u64()?,
        serde_json::Value::String(s) => s.trim().parse().ok()?,
        _ => return None,
    };
    (1..=3).contains(&n).then_some(n as u8)
}

pub(crate) fn extract_json_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    (end > start).then(|| &text[start..=end])
}

/// Top-k probabilities of one generated token plus the unobserved tail mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDistribution {
    /// Token text when the provider reports it; used to locate field spans.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<String>,
    /// Log-probability of the token actually emitted.
    pub logprob: f64,
    pub top: Vec<f64>,
    pub tail: f64,
}

impl TokenDistribution {
    /// Builds a distribution, deriving the tail as `1 - sum(top)`.
    pub fn from_top(token: Option<String>, logprob: f64, top: Vec<f64>) -> Result<Self, SignalError> {
        let sum: f64 = top.iter().sum();
        let tail = (1.0 - sum).max(0.0);
        let d = TokenDistribution { token, logprob, top, tail };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        let in_unit = |p: f64| p.is_finite() && (0.0..=1.0).contains(&p);
        if !self.top.iter().copied().all(in_unit) || !in_unit(self.tail) {
            return Err(SignalError::Argument("token probability outside [0, 1]".into()));
        }
        if self.top.len() > TOP_K {
            return Err(SignalError::Argument(format!(
                "{} alternatives given; at most {TOP_K} are kept",
                self.top.len()
            )));
        }
        let total = self.top.iter().sum::<f64>() + self.tail;
        if (total - 1.0).abs() > DISTRIBUTION_TOLERANCE {
            return Err(SignalError::Argument(format!("top-k mass plus tail sums to {total}, not 1")));
        }
        if !(self.logprob <= 0.0) {
            return Err(SignalError::Argument(format!("log-probability {} is positive", self.logprob)));
        }
        Ok(())
    }

    /// `sum(-p ln p)` over the top-k buckets and the tail bucket.
    pub fn entropy(&self) -> f64 {
        self.top.iter().map(|&p| plogp(p)).sum::<f64>() + plogp(self.tail)
    }
}

fn plogp(p: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        -p * p.ln()
    }
}

/// `exp(-mean(logprobs))`.
pub fn perplexity(token_logprobs: &[f64]) -> Result<f64, SignalError> {
    if token_logprobs.is_empty() {
        return Err(SignalError::Argument("perplexity of an empty token sequence".into()));
    }
    if let Some(lp) = token_logprobs.iter().find(|lp| !(**lp <= 0.0)) {
        return Err(SignalError::Argument(format!("log-probability {lp} is positive or NaN")));
    }
    let mean = token_logprobs.iter().sum::<f64>() / token_logprobs.len() as f64;
    Ok((-mean).exp())
}

/// Mean per-token truncated entropy in nats, with `0 ln 0 = 0`.
pub fn truncated_entropy(dists: &[TokenDistribution]) -> Result<f64, SignalError> {
    if dists.is_empty() {
        return Err(SignalError::Argument("entropy of an empty token sequence".into()));
    }
    let mut total = 0.0;
    for d in dists {
        d.validate()?;
        total += d.entropy();
    }
    Ok(total / dists.len() as f64)
}

/// Divides by `ln(k + 1)`, the entropy of the uniform distribution over the
/// k explicit buckets plus the tail, and clamps to 1.
pub fn normalize_entropy(raw_nats: f64) -> Result<f64, SignalError> {
    if !(raw_nats >= 0.0) {
        return Err(SignalError::Argument(format!("entropy {raw_nats} is negative or NaN")));
    }
    Ok((raw_nats / ((TOP_K + 1) as f64).ln()).min(1.0))
}

pub fn confidence_weight(likert: u8) -> Result<f64, SignalError> {
    if !(1..=3).contains(&likert) {
        return Err(SignalError::Argument(format!("Likert confidence {likert} outside 1..=3")));
    }
    Ok(likert as f64 / 3.0)
}

/// `eps + (1 - eps) * (1 - H_norm)`.
pub fn certainty(h_norm: f64) -> Result<f64, SignalError> {
    if !(0.0..=1.0).contains(&h_norm) {
        return Err(SignalError::Argument(format!("normalized entropy {h_norm} outside [0, 1]")));
    }
    Ok(CERTAINTY_FLOOR + (1.0 - CERTAINTY_FLOOR) * (1.0 - h_norm))
}

pub fn signal_strength(likert: u8, h_norm: f64) -> Result<f64, SignalError> {
    Ok(confidence_weight(likert)? * certainty(h_norm)?)
}

pub fn interaction_term(direction: Direction, strength: f64) -> f64 {
    direction.sign() * strength
}

/// Everything derived from one strategy, as exported to the environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalFeature {
    pub date: NaiveDate,
    pub dir: Direction,
    pub likert: u8,
    pub h_norm: f64,
    pub certainty: f64,
    pub strength: f64,
    pub tau: f64,
}

impl SignalFeature {
    pub fn new(date: NaiveDate, dir: Direction, likert: u8, h_norm: f64) -> Result<Self, SignalError> {
        let certainty = certainty(h_norm)?;
        let strength = confidence_weight(likert)? * certainty;
        Ok(SignalFeature {
            date,
            dir,
            likert,
            h_norm,
            certainty,
            strength,
            tau: interaction_term(dir, strength),
        })
    }

    pub fn from_strategy(strategy: &Strategy, h_norm: f64) -> Result<Self, SignalError> {
        SignalFeature::new(strategy.date, strategy.direction, strategy.confidence_likert, h_norm)
    }

    /// Observation value under an ablation mode.
    pub fn value(&self, mode: SignalMode) -> f64 {
        match mode {
            SignalMode::Off => 0.0,
            SignalMode::DirOnly => self.dir.sign(),
            SignalMode::ConfDir => self.dir.sign() * (self.likert as f64 / 3.0),
            SignalMode::Tau => self.tau,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct SignalRow {
    date: NaiveDate,
    dir: u8,
    likert: u8,
    #[serde(rename = "H_norm")]
    h_norm: f64,
    #[serde(rename = "C")]
    certainty: f64,
    strength: f64,
    tau: f64,
}

/// `date,dir,likert,H_norm,C,strength,tau`.
pub fn write_signals_csv<W: Write>(signals: &[SignalFeature], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    for s in signals {
        w.serialize(SignalRow {
            date: s.date,
            dir: s.dir.index() as u8,
            likert: s.likert,
            h_norm: s.h_norm,
            certainty: s.certainty,
            strength: s.strength,
            tau: s.tau,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_signals_csv<R: Read>(reader: R) -> Result<Vec<SignalFeature>, csv::Error> {
    let mut r = csv::Reader::from_reader(reader);
    r.deserialize::<SignalRow>()
        .map(|row| {
            let row = row?;
            Ok(SignalFeature {
                date: row.date,
                dir: Direction::from_index(row.dir as usize).unwrap_or(Direction::Short),
                likert: row.likert,
                h_norm: row.h_norm,
                certainty: row.certainty,
                strength: row.strength,
                tau: row.tau,
            })
        })
        .collect()
}

/// Byte ranges of the `action` and `action_confidence` values.
pub(crate) fn decision_spans(text: &str) -> Vec<(usize, usize)> {
    let re = Regex::new(r#""action"\s*:\s*"([^"]*)"|"action_confidence"\s*:\s*"?(\d+)"?"#).expect("static regex");
    re.captures_iter(text)
        .filter_map(|c| c.get(1).or_else(|| c.get(2)))
        .map(|m| (m.start(), m.end()))
        .collect()
}

/// Tokens whose text overlaps the values of the `action` and
/// `action_confidence` fields. Falls back to the whole completion when the
/// provider gave no token text or the fields cannot be located.
pub fn decision_tokens<'a>(text: &str, tokens: &'a [TokenDistribution]) -> Vec<&'a TokenDistribution> {
    let all = || tokens.iter().collect::<Vec<_>>();
    let Some(pieces) = tokens.iter().map(|t| t.token.as_deref()).collect::<Option<Vec<&str>>>() else {
        return all();
    };
    let rebuilt: String = pieces.concat();
    if rebuilt != text {
        return all();
    }
    let spans = decision_spans(text);
    if spans.is_empty() {
        return all();
    }
    let mut offset = 0;
    let mut picked = Vec::new();
    for (tok, piece) in tokens.iter().zip(pieces) {
        let (s, e) = (offset, offset + piece.len());
        offset = e;
        if spans.iter().any(|&(a, b)| s < b && a < e) {
            picked.push(tok);
        }
    }
    if picked.is_empty() {
        all()
    } else {
        picked
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn date() -> NaiveDate {
        NaiveDate::from_ymd_opt(2019, 1, 2).unwrap()
    }

    #[test]
    fn perplexity_examples() {
        assert_eq!(perplexity(&[0.0, 0.0, 0.0]).unwrap(), 1.0);
        let half = 0.5f64.ln();
        assert!((perplexity(&[half; 7]).unwrap() - 2.0).abs() < 1e-12);
        assert!(perplexity(&[]).is_err());
        assert!(perplexity(&[0.1]).is_err());
    }

    #[test]
    fn entropy_examples() {
        let det = TokenDistribution::from_top(None, 0.0, vec![1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(truncated_entropy(&[det]).unwrap(), 0.0);
        let tail_only = TokenDistribution {
            token: None,
            logprob: -1.0,
            top: vec![0.0; 5],
            tail: 1.0,
        };
        assert_eq!(truncated_entropy(&[tail_only]).unwrap(), 0.0);
        let uniform = TokenDistribution::from_top(None, 0.2f64.ln(), vec![0.2; 5]).unwrap();
        assert!((truncated_entropy(&[uniform]).unwrap() - 5f64.ln()).abs() < 1e-12);
        let bad = TokenDistribution {
            token: None,
            logprob: 0.0,
            top: vec![1.2],
            tail: 0.0,
        };
        assert!(truncated_entropy(&[bad]).is_err());
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_entropy(0.0).unwrap(), 0.0);
        assert!((normalize_entropy(6f64.ln()).unwrap() - 1.0).abs() < 1e-15);
        assert!((normalize_entropy(5f64.ln()).unwrap() - 0.898244).abs() < 1e-6);
        assert!(normalize_entropy(-0.1).is_err());
    }

    #[test]
    fn strength_examples() {
        assert_eq!(signal_strength(3, 0.0).unwrap(), 1.0);
        assert!((signal_strength(3, 1.0).unwrap() - 0.01).abs() < 1e-15);
        assert!((signal_strength(2, 0.5).unwrap() - 0.336_666_666_666_666_7).abs() < 1e-12);
        assert!(signal_strength(4, 0.5).is_err());
        assert!(signal_strength(0, 0.5).is_err());
    }

    #[test]
    fn tau_examples() {
        assert_eq!(interaction_term(Direction::Long, 0.8), 0.8);
        assert_eq!(interaction_term(Direction::Short, 0.8), -0.8);
        let s = SignalFeature::new(date(), Direction::Short, 1, 0.25).unwrap();
        assert!((s.tau + 0.250_833_333_333_333_3).abs() < 1e-12, "{}", s.tau);
    }

    #[test]
    fn parse_valid_strategy() {
        let s = parse_strategy(
            r#"```json
            {"action": "LONG", "action_confidence": 3, "explanation": "Close above 20MA.",
             "features_used": [{"feature": "Technical_Analysis.RSI.Value", "direction": "LONG", "weight": 2}]}
            ```"#,
            date(),
        )
        .unwrap();
        assert_eq!(s.direction, Direction::Long);
        assert_eq!(s.confidence_likert, 3);
        assert_eq!(s.features_used[0].weight, 2);
    }

    #[test]
    fn parse_rejections() {
        let bad_conf = r#"{"action":"LONG","action_confidence":4,"explanation":"x","features_used":[]}"#;
        assert!(matches!(parse_strategy(bad_conf, date()), Err(SignalError::Validation(_))));
        let hold = r#"{"action":"HOLD","action_confidence":2,"explanation":"x","features_used":[]}"#;
        assert!(matches!(parse_strategy(hold, date()), Err(SignalError::Validation(_))));
        let missing = r#"{"action":"LONG","explanation":"x","features_used":[]}"#;
        assert!(matches!(parse_strategy(missing, date()), Err(SignalError::Validation(_))));
        let long_text = format!(
            r#"{{"action":"LONG","action_confidence":2,"explanation":"{}","features_used":[]}}"#,
            "word ".repeat(351)
        );
        assert!(parse_strategy(&long_text, date()).is_err());
    }

    #[test]
    fn decision_span_selection() {
        let pieces = ["{\"action\": \"", "LONG", "\", \"action_confidence\": ", "3", ", \"x\": 1}"];
        let tokens: Vec<TokenDistribution> = pieces
            .iter()
            .enumerate()
            .map(|(i, p)| TokenDistribution::from_top(Some(p.to_string()), -(i as f64) * 0.1, vec![0.5, 0.5]).unwrap())
            .collect();
        let text: String = pieces.concat();
        let picked = decision_tokens(&text, &tokens);
        let got: Vec<&str> = picked.iter().map(|t| t.token.as_deref().unwrap()).collect();
        assert_eq!(got, vec!["LONG", "3"]);
        // no token text: full completion
        let bare: Vec<TokenDistribution> = tokens.iter().map(|t| TokenDistribution { token: None, ..t.clone() }).collect();
        assert_eq!(decision_tokens(&text, &bare).len(), 5);
    }

    #[test]
    fn mode_values() {
        let s = SignalFeature::new(date(), Direction::Short, 2, 0.0).unwrap();
        assert_eq!(s.value(SignalMode::Off), 0.0);
        assert_eq!(s.value(SignalMode::DirOnly), -1.0);
        assert!((s.value(SignalMode::ConfDir) + 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.value(SignalMode::Tau), s.tau);
    }
}
