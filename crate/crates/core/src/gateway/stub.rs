//! Offline backend. Output is a pure function of the prompt bytes and the
//! seed, except that an optional script overrides the strategist's direction,
//! confidence and decision-token entropy call by call.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CompletionBackend, CompletionParams, CompletionResult, GatewayError, Usage};
use crate::direction::Direction;
use crate::signal::{decision_spans, TokenDistribution, TOP_K};

pub const ANALYST_MARKER: &str = "Monthly_News_Articles_List";
pub const WRITER_MARKER: &str = "Writer_Context:";
pub const JUDGE_MARKER: &str = "Judge_Context:";
pub const TEMPLATE_OPEN: &str = "<<<TEMPLATE";
pub const TEMPLATE_CLOSE: &str = "TEMPLATE>>>";

/// One scripted strategist reply.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScriptedStrategy {
    pub direction: Direction,
    pub likert: u8,
    /// Normalized entropy the decision tokens should carry, in `[0, 1]`.
    pub h_norm: f64,
}

#[derive(Debug, Default)]
pub struct StubBackend {
    schedule: Vec<ScriptedStrategy>,
    strategist_calls: AtomicUsize,
}

impl StubBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// The n-th strategist call answers with `schedule[n]`; calls beyond the
    /// end are an error.
    pub fn with_schedule(schedule: Vec<ScriptedStrategy>) -> Result<Self, GatewayError> {
        for s in &schedule {
            if !(1..=3).contains(&s.likert) || !(0.0..=1.0).contains(&s.h_norm) {
                return Err(GatewayError::Argument(format!("invalid scripted strategy {s:?}")));
            }
        }
        Ok(StubBackend {
            schedule,
            strategist_calls: AtomicUsize::new(0),
        })
    }

    fn rng(prompt: &str, seed: u64) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(prompt.as_bytes());
        h.update(seed.to_le_bytes());
        ChaCha8Rng::from_seed(h.finalize().into())
    }

    fn strategist(&self, prompt: &str, rng: &mut ChaCha8Rng) -> Result<(String, f64), GatewayError> {
        let scripted = if self.schedule.is_empty() {
            None
        } else {
            let n = self.strategist_calls.fetch_add(1, Ordering::SeqCst);
            Some(*self.schedule.get(n).ok_or_else(|| {
                GatewayError::Argument(format!("stub schedule exhausted after {} strategist calls", self.schedule.len()))
            })?)
        };
        let s = scripted.unwrap_or_else(|| ScriptedStrategy {
            direction: if rng.gen_bool(0.5) { Direction::Long } else { Direction::Short },
            likert: rng.gen_range(1..=3),
            h_norm: rng.gen_range(0.05..0.5),
        });
        let mut keys = prompt_keys(prompt);
        keys.shuffle(rng);
        keys.truncate(rng.gen_range(3..=5).min(keys.len()));
        let features: Vec<serde_json::Value> = keys
            .iter()
            .map(|k| {
                let dir = if rng.gen_bool(0.75) {
                    s.direction.as_str()
                } else {
                    "NEUTRAL"
                };
                serde_json::json!({"feature": k, "direction": dir, "weight": rng.gen_range(1..=3)})
            })
            .collect();
        let lead = keys.first().map(String::as_str).unwrap_or("price trend");
        let explanation = format!(
            "{} bias for the next month. {} carries the most weight; the remaining features are {} with the call.",
            if s.direction == Direction::Long { "Bullish" } else { "Bearish" },
            lead,
            ["broadly consistent", "partly consistent", "mixed but not contradictory"][rng.gen_range(0..3)],
        );
        let body = serde_json::json!({
            "action": s.direction.as_str(),
            "action_confidence": s.likert,
            "explanation": explanation,
            "features_used": features,
        });
        Ok((body.to_string(), s.h_norm))
    }

    fn analyst(prompt: &str, rng: &mut ChaCha8Rng) -> String {
        let articles: Vec<&str> = prompt
            .lines()
            .map(str::trim)
            .filter(|l| l.split_once(". ").is_some_and(|(n, _)| n.trim_start_matches('"').parse::<u32>().is_ok()))
            .collect();
        let factors: Vec<serde_json::Value> = (0..super::FACTORS_PER_RESPONSE)
            .map(|i| {
                let summary = articles
                    .get(i)
                    .map(|a| a.split_whitespace().skip(1).take(12).collect::<Vec<_>>().join(" "))
                    .unwrap_or_else(|| "No further material news.".to_string());
                serde_json::json!({
                    "factor": summary,
                    "sentiment": rng.gen_range(-1..=1),
                    "market_impact": rng.gen_range(1..=3),
                })
            })
            .collect();
        serde_json::json!({ "factors": factors }).to_string()
    }

    fn writer(prompt: &str, rng: &mut ChaCha8Rng) -> Result<String, GatewayError> {
        let start = prompt
            .find(TEMPLATE_OPEN)
            .ok_or_else(|| GatewayError::Argument("writer prompt has no base template".into()))?;
        let end = prompt[start..]
            .find(TEMPLATE_CLOSE)
            .map(|e| start + e)
            .ok_or_else(|| GatewayError::Argument("writer prompt has an unterminated template".into()))?;
        let base = prompt[start + TEMPLATE_OPEN.len()..end].trim_matches('\n');
        let pool: Vec<&str> = section_items(prompt, "Instructions_Pool:");
        let mut out = String::new();
        let mut inserted = false;
        for line in base.lines() {
            out.push_str(line);
            out.push('\n');
            if !inserted && line.contains("Develop a LONG or SHORT") && !pool.is_empty() {
                let pick = pool[rng.gen_range(0..pool.len())].replace(['{', '}'], "");
                let indent: String = line.chars().take_while(|c| c.is_whitespace()).collect();
                out.push_str(&format!("{indent}Additional guidance: {pick}\n"));
                inserted = true;
            }
        }
        Ok(format!("{TEMPLATE_OPEN}\n{out}{TEMPLATE_CLOSE}\n"))
    }

    fn judge(prompt: &str, rng: &mut ChaCha8Rng) -> String {
        let features = section_items(prompt, "Selected_Features:");
        let focus = features
            .get(rng.gen_range(0..features.len().max(1)))
            .copied()
            .unwrap_or("trend features");
        let verdict = ["Rationale is coherent", "Rationale is thin", "Rationale overweights one signal"]
            [rng.gen_range(0..3)];
        format!("{verdict}. Consider giving {focus} a more explicit role and tightening the confidence criteria.")
    }
}

/// YAML-style keys that carry a quoted value, used as feature names.
fn prompt_keys(prompt: &str) -> Vec<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r#"(?m)^\s+([A-Za-z0-9_]+):\s*""#).expect("static regex"));
    let mut keys: Vec<String> = re.captures_iter(prompt).map(|c| c[1].to_string()).collect();
    keys.dedup();
    if keys.is_empty() {
        keys.push("Close".to_string());
    }
    keys
}

/// `- item` lines directly under a `header` line.
fn section_items<'a>(prompt: &'a str, header: &str) -> Vec<&'a str> {
    let mut lines = prompt.lines().skip_while(|l| !l.trim_start().starts_with(header));
    if lines.next().is_none() {
        return Vec::new();
    }
    lines
        .map(str::trim)
        .take_while(|l| l.starts_with("- "))
        .map(|l| l[2..].trim())
        .collect()
}

/// Words, single punctuation marks and whitespace runs. Concatenating the
/// tokens gives back the input.
pub fn tokenize(text: &str) -> Vec<&str> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"\w+|\s+|[^\w\s]").expect("static regex"));
    re.find_iter(text).map(|m| m.as_str()).collect()
}

/// Top-1 mass `q` with the rest spread evenly over four alternatives and the
/// tail, chosen so the truncated entropy equals `target_nats`.
pub fn entropy_target_distribution(target_nats: f64) -> Result<f64, GatewayError> {
    let buckets = (TOP_K + 1) as f64;
    let max = buckets.ln();
    if !(0.0..=max + 1e-12).contains(&target_nats) {
        return Err(GatewayError::Argument(format!("entropy target {target_nats} outside [0, ln 6]")));
    }
    let rest = (TOP_K) as f64;
    let h = |q: f64| {
        let r = (1.0 - q) / rest;
        let a = if q > 0.0 { -q * q.ln() } else { 0.0 };
        let b = if r > 0.0 { -(1.0 - q) * r.ln() } else { 0.0 };
        a + b
    };
    // h decreases from ln 6 at q = 1/6 to 0 at q = 1.
    let (mut lo, mut hi) = (1.0 / buckets, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if h(mid) > target_nats {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn distribution(token: &str, q: f64) -> TokenDistribution {
    let r = (1.0 - q) / TOP_K as f64;
    let mut top = vec![q];
    top.extend(std::iter::repeat(r).take(TOP_K - 1));
    let tail = 1.0 - top.iter().sum::<f64>();
    TokenDistribution {
        token: Some(token.to_string()),
        logprob: q.ln(),
        top,
        tail: tail.max(0.0),
    }
}

impl CompletionBackend for StubBackend {
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<CompletionResult, GatewayError> {
        let mut rng = Self::rng(prompt, params.seed);
        let (text, decision_h) = if prompt.contains(WRITER_MARKER) {
            (Self::writer(prompt, &mut rng)?, None)
        } else if prompt.contains(JUDGE_MARKER) {
            (Self::judge(prompt, &mut rng), None)
        } else if prompt.contains(ANALYST_MARKER) {
            (Self::analyst(prompt, &mut rng), None)
        } else {
            let (t, h) = self.strategist(prompt, &mut rng)?;
            (t, Some(h))
        };
        let spans = decision_spans(&text);
        let decision_q = decision_h
            .map(|h| entropy_target_distribution(h * ((TOP_K + 1) as f64).ln()))
            .transpose()?;
        let mut tokens = Vec::new();
        let mut offset = 0;
        for piece in tokenize(&text) {
            let (s, e) = (offset, offset + piece.len());
            offset = e;
            let in_decision = spans.iter().any(|&(a, b)| s < b && a < e);
            let q = match (in_decision, decision_q) {
                (true, Some(q)) => q,
                _ => rng.gen_range(0.85..0.999),
            };
            tokens.push(distribution(piece, q));
        }
        let usage = Usage {
            prompt_tokens: tokenize(prompt).len() as u64,
            completion_tokens: tokens.len() as u64,
        };
        Ok(CompletionResult { text, tokens, usage })
    }

    fn name(&self) -> &str {
        "stub"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{decision_tokens, normalize_entropy, parse_strategy, truncated_entropy};
    use chrono::NaiveDate;

    fn date() -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 1, 2).unwrap()
    }

    #[test]
    fn deterministic_per_prompt_and_seed() {
        let stub = StubBackend::new();
        let p = CompletionParams::GENERATION;
        let a = stub.complete("Close: \"1\"\n  RSI: \"50\"", &p).unwrap();
        let b = stub.complete("Close: \"1\"\n  RSI: \"50\"", &p).unwrap();
        assert_eq!(a, b);
        assert_eq!(tokenize(&a.text).concat(), a.text);
        for t in &a.tokens {
            t.validate().unwrap();
        }
        parse_strategy(&a.text, date()).unwrap();
    }

    #[test]
    fn entropy_target_hits() {
        for h in [0.0, 0.3, 1.0, 1.7, 6f64.ln()] {
            let q = entropy_target_distribution(h).unwrap();
            let d = distribution("x", q);
            assert!((d.entropy() - h).abs() < 1e-12, "{h}: {}", d.entropy());
        }
        assert!(entropy_target_distribution(2.0).is_err());
    }

    #[test]
    fn scripted_schedule_drives_signal() {
        let sched = vec![
            ScriptedStrategy { direction: Direction::Short, likert: 3, h_norm: 0.2 },
            ScriptedStrategy { direction: Direction::Long, likert: 1, h_norm: 0.9 },
        ];
        let stub = StubBackend::with_schedule(sched.clone()).unwrap();
        for s in &sched {
            let r = stub.complete("prompt", &CompletionParams::GENERATION).unwrap();
            let strat = parse_strategy(&r.text, date()).unwrap();
            assert_eq!((strat.direction, strat.confidence_likert), (s.direction, s.likert));
            let dec: Vec<TokenDistribution> = decision_tokens(&r.text, &r.tokens).into_iter().cloned().collect();
            assert_eq!(dec.len(), 2);
            let h = normalize_entropy(truncated_entropy(&dec).unwrap()).unwrap();
            assert!((h - s.h_norm).abs() < 1e-12);
        }
        assert!(stub.complete("prompt", &CompletionParams::GENERATION).is_err());
    }

    #[test]
    fn analyst_returns_three_factors() {
        let prompt = super::super::render_analyst_prompt(&[
            super::super::AnonymizedText::trusted("the Company signs a supply deal"),
            super::super::AnonymizedText::trusted("the Company misses estimates"),
        ])
        .unwrap();
        let r = StubBackend::new().complete(&prompt, &CompletionParams::GENERATION).unwrap();
        let f = super::super::parse_analyst_response(&r.text).unwrap();
        assert_eq!(f.len(), 3);
        assert!(f[0].factor.contains("supply deal"));
    }
}
