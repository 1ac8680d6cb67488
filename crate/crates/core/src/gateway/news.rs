use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::GatewayError;
use crate::signal::extract_json_object;

pub const FACTORS_PER_RESPONSE: usize = 3;
const MAX_FACTOR_WORDS: usize = 70;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewsFactor {
    pub factor: String,
    /// -1, 0 or +1.
    pub sentiment: i8,
    /// Likert 1..=3.
    pub market_impact: u8,
}

/// Monthly news fields placed in the strategist prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewsSummary {
    pub sentiment: i8,
    pub impact: u8,
}

impl NewsSummary {
    /// Used when there is no news for the month.
    pub const NEUTRAL: NewsSummary = NewsSummary { sentiment: 0, impact: 1 };
}

fn int_field(v: Option<&Value>, name: &str) -> Result<i64, String> {
    match v {
        Some(Value::Number(n)) => n
            .as_i64()
            .or_else(|| n.as_f64().filter(|f| f.fract() == 0.0).map(|f| f as i64))
            .ok_or_else(|| format!("{name} is not an integer")),
        Some(Value::String(s)) => s
            .trim()
            .trim_start_matches('+')
            .parse()
            .map_err(|_| format!("{name} {s:?} is not an integer")),
        Some(other) => Err(format!("{name} has unexpected value {other}")),
        None => Err(format!("missing {name}")),
    }
}

/// Parses `{"factors": [{factor, sentiment, market_impact}, ...]}` and
/// requires exactly three factors.
pub fn parse_analyst_response(text: &str) -> Result<Vec<NewsFactor>, GatewayError> {
    let malformed = |message: String| GatewayError::Malformed {
        message,
        body: text.to_string(),
    };
    let json = extract_json_object(text).ok_or_else(|| malformed("no JSON object in analyst response".into()))?;
    let v: Value = serde_json::from_str(json).map_err(|e| malformed(format!("analyst JSON: {e}")))?;
    let items = v
        .get("factors")
        .and_then(Value::as_array)
        .ok_or_else(|| malformed("missing factors array".into()))?;
    if items.len() != FACTORS_PER_RESPONSE {
        return Err(malformed(format!("expected {FACTORS_PER_RESPONSE} factors, got {}", items.len())));
    }
    items
        .iter()
        .map(|item| {
            let factor = item
                .get("factor")
                .and_then(Value::as_str)
                .ok_or_else(|| malformed("factor text missing".into()))?
                .trim()
                .to_string();
            if factor.split_whitespace().count() > MAX_FACTOR_WORDS {
                return Err(malformed(format!("factor longer than {MAX_FACTOR_WORDS} words")));
            }
            let sentiment = int_field(item.get("sentiment"), "sentiment").map_err(malformed)?;
            if !(-1..=1).contains(&sentiment) {
                return Err(malformed(format!("sentiment {sentiment} outside -1..=1")));
            }
            let impact = int_field(item.get("market_impact"), "market_impact").map_err(malformed)?;
            if !(1..=3).contains(&impact) {
                return Err(malformed(format!("market_impact {impact} outside 1..=3")));
            }
            Ok(NewsFactor {
                factor,
                sentiment: sentiment as i8,
                market_impact: impact as u8,
            })
        })
        .collect()
}

/// Sentiment is the sign of the impact-weighted sentiment sum. Impact is the
/// largest impact among factors agreeing with that sign, or 1 when neutral.
pub fn aggregate_news(factors: &[NewsFactor]) -> NewsSummary {
    let score: i32 = factors
        .iter()
        .map(|f| f.sentiment as i32 * f.market_impact as i32)
        .sum();
    let sentiment = score.signum() as i8;
    if sentiment == 0 {
        return NewsSummary::NEUTRAL;
    }
    let impact = factors
        .iter()
        .filter(|f| f.sentiment == sentiment)
        .map(|f| f.market_impact)
        .max()
        .unwrap_or(1);
    NewsSummary { sentiment, impact }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f(s: i8, m: u8) -> NewsFactor {
        NewsFactor {
            factor: "x".into(),
            sentiment: s,
            market_impact: m,
        }
    }

    #[test]
    fn parse_three() {
        let text = r#"Here: {"factors": [
            {"factor": "Deal", "sentiment": "+1", "market_impact": 3},
            {"factor": "Lawsuit", "sentiment": -1, "market_impact": 2},
            {"factor": "Flat", "sentiment": 0, "market_impact": 1}]}"#;
        let got = parse_analyst_response(text).unwrap();
        assert_eq!(got[0], NewsFactor { factor: "Deal".into(), sentiment: 1, market_impact: 3 });
        assert_eq!(aggregate_news(&got), NewsSummary { sentiment: 1, impact: 3 });
    }

    #[test]
    fn wrong_count_and_ranges() {
        let two = r#"{"factors": [{"factor": "a", "sentiment": 1, "market_impact": 3}, {"factor": "b", "sentiment": 1, "market_impact": 3}]}"#;
        assert!(matches!(parse_analyst_response(two), Err(GatewayError::Malformed { .. })));
        let bad = r#"{"factors": [{"factor": "a", "sentiment": 2, "market_impact": 3}, {"factor": "b", "sentiment": 1, "market_impact": 3}, {"factor": "c", "sentiment": 1, "market_impact": 3}]}"#;
        assert!(parse_analyst_response(bad).is_err());
        assert!(matches!(parse_analyst_response("not json"), Err(GatewayError::Malformed { body, .. }) if body == "not json"));
    }

    #[test]
    fn aggregation() {
        assert_eq!(aggregate_news(&[f(1, 1), f(-1, 1), f(0, 3)]), NewsSummary::NEUTRAL);
        assert_eq!(aggregate_news(&[f(1, 1), f(-1, 3), f(1, 1)]), NewsSummary { sentiment: -1, impact: 3 });
    }
}
