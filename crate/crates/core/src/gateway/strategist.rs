//! Monthly strategy generation: context assembly, news factors, parsing and
//! the reduction of each reply to a [`SignalFeature`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    aggregate_news, audit_prompt, parse_analyst_response, prompt_digest, render_analyst_prompt, AnonymizedText,
    Anonymizer, CompletionParams, Gateway, GatewayError, NewsSummary, PromptContext, PromptTemplate, UsageKey,
};
use crate::direction::Direction;
use crate::env::BLOCK_LEN;
use crate::features::weekly_past_returns;
use crate::frame::FeatureFrame;
use crate::ingest::NewsItem;
use crate::signal::{
    decision_tokens, normalize_entropy, parse_strategy, perplexity, truncated_entropy, SignalFeature, Strategy,
    TokenDistribution,
};

pub const DEFAULT_PERSONA: &str = "Experienced equity portfolio manager trading a single stock";
pub const DEFAULT_OBJECTIVES: &str =
    "Maximize risk-adjusted return (Sharpe ratio) over the next month while limiting drawdowns";

/// Previous month's strategy and the return it realized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorStrategy {
    pub direction: Direction,
    pub rationale: String,
    pub realized_return: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextOptions {
    pub persona: String,
    pub portfolio_objectives: String,
    /// Values not taken from the frame, e.g. `classification` or `Market_Beta`.
    pub static_fields: BTreeMap<String, String>,
    /// Render absent values as N/A instead of failing.
    pub missing_as_na: bool,
    /// Bars listed under `Last_Weeks_Price`.
    pub price_history: usize,
}

impl Default for ContextOptions {
    fn default() -> Self {
        ContextOptions {
            persona: DEFAULT_PERSONA.into(),
            portfolio_objectives: DEFAULT_OBJECTIVES.into(),
            static_fields: BTreeMap::new(),
            missing_as_na: false,
            price_history: 5,
        }
    }
}

fn fmt_num(x: f64) -> String {
    if x.abs() >= 1.0 {
        format!("{x:.2}")
    } else {
        format!("{x:.4}")
    }
}

fn fmt_pct(x: f64) -> String {
    format!("{:+.2}%", 100.0 * x)
}

fn dense_tail(frame: &FeatureFrame, name: &str, row: usize, n: usize) -> Option<Vec<f64>> {
    let col = frame.column(name)?;
    if row + 1 < n {
        return None;
    }
    col[row + 1 - n..=row].iter().copied().collect()
}

/// Placeholder values for `template` at `row` of `frame`. Only placeholders
/// the template uses are filled.
pub fn strategist_context(
    template: &PromptTemplate,
    frame: &FeatureFrame,
    row: usize,
    prior: Option<&PriorStrategy>,
    news: Option<NewsSummary>,
    opts: &ContextOptions,
) -> Result<PromptContext, GatewayError> {
    if row >= frame.len() {
        return Err(GatewayError::Argument(format!("row {row} outside frame of length {}", frame.len())));
    }
    let mut ctx = PromptContext::new();
    let news = news.unwrap_or(NewsSummary::NEUTRAL);
    for p in template.placeholders() {
        let value: Option<String> = match p.as_str() {
            "persona" => Some(opts.persona.clone()),
            "portfolio_objectives" => Some(opts.portfolio_objectives.clone()),
            _ if opts.static_fields.contains_key(p) => Some(opts.static_fields[p].clone()),
            "Last_LLM_Strat_Returns" | "Last_LLM_Strat_Action" | "Last_LLM_Strat" => {
                match prior {
                    Some(s) => Some(match p.as_str() {
                        "Last_LLM_Strat_Returns" => fmt_pct(s.realized_return),
                        "Last_LLM_Strat_Action" => s.direction.as_str().to_string(),
                        _ => s.rationale.clone(),
                    }),
                    None => {
                        ctx.set_na(p.clone());
                        continue;
                    }
                }
            }
            "news_sentiment" => Some(format!("{:+}", news.sentiment)),
            "news_impact_score" => Some(news.impact.to_string()),
            "Close" => dense_tail(frame, "Close", row, opts.price_history)
                .map(|v| v.iter().map(|x| fmt_num(*x)).collect::<Vec<_>>().join(", ")),
            "Volume" => dense_tail(frame, "Volume", row, opts.price_history)
                .map(|v| v.iter().map(|x| format!("{x:.0}")).collect::<Vec<_>>().join(", ")),
            "Weekly_Past_Returns" => dense_tail(frame, "Close", row, 21).and_then(|closes| {
                weekly_past_returns(&closes, 20)
                    .ok()
                    .map(|w| w.iter().map(|r| fmt_pct(*r)).collect::<Vec<_>>().join(", "))
            }),
            other => frame.value(other, row).map(fmt_num),
        };
        match value {
            Some(v) => {
                ctx.set(p.clone(), v);
            }
            None if opts.missing_as_na => {
                ctx.set_na(p.clone());
            }
            None => {
                return Err(GatewayError::Template(format!(
                    "no value for {p} on {}; supply it or allow N/A",
                    frame.index()[row]
                )))
            }
        }
    }
    Ok(ctx)
}

/// Rows where a new monthly strategy is issued: `start, start + 20, ...`.
pub fn block_starts(start: usize, end: usize) -> Vec<usize> {
    (start..=end).step_by(BLOCK_LEN).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedStrategy {
    pub strategy: Strategy,
    pub signal: SignalFeature,
    pub perplexity: f64,
    /// Mean truncated entropy of the decision tokens, in nats.
    pub entropy: f64,
    pub news: NewsSummary,
    pub prompt_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategistRun {
    pub instrument: String,
    pub prompt_version: String,
    pub strategies: Vec<GeneratedStrategy>,
}

impl StrategistRun {
    pub fn signals(&self) -> Vec<SignalFeature> {
        self.strategies.iter().map(|s| s.signal.clone()).collect()
    }
}

pub struct StrategyGenerator<'a> {
    pub gateway: &'a Gateway,
    pub template: PromptTemplate,
    /// Ledger label for the template, e.g. "P4".
    pub prompt_version: String,
    pub instrument: String,
    pub params: CompletionParams,
    pub options: ContextOptions,
    pub anonymizer: Anonymizer,
}

impl<'a> StrategyGenerator<'a> {
    pub fn new(gateway: &'a Gateway, template: PromptTemplate, prompt_version: &str, instrument: &str) -> Self {
        StrategyGenerator {
            gateway,
            template,
            prompt_version: prompt_version.to_string(),
            instrument: instrument.to_string(),
            params: CompletionParams::GENERATION,
            options: ContextOptions::default(),
            anonymizer: Anonymizer::new(&BTreeMap::new()).expect("empty entity map"),
        }
    }

    /// Runs the analyst over anonymized articles. No articles means neutral
    /// news and no call.
    pub fn news_summary(&self, items: &[&NewsItem], reference: chrono::NaiveDate) -> Result<NewsSummary, GatewayError> {
        if items.is_empty() {
            return Ok(NewsSummary::NEUTRAL);
        }
        let articles: Vec<AnonymizedText> = items
            .iter()
            .map(|n| self.anonymizer.anonymize(&format!("{}. {}", n.headline, n.body), Some(reference)))
            .collect();
        let prompt = render_analyst_prompt(&articles)?;
        audit_prompt(&self.anonymizer, &prompt)?;
        let key = UsageKey::new(self.instrument.clone(), "analyst");
        let result = self.gateway.complete(&key, &prompt, &self.params)?;
        Ok(aggregate_news(&parse_analyst_response(&result.text)?))
    }

    /// One strategy from the features at `row`.
    pub fn generate_at(
        &self,
        frame: &FeatureFrame,
        row: usize,
        prior: Option<&PriorStrategy>,
        news: Option<NewsSummary>,
    ) -> Result<GeneratedStrategy, GatewayError> {
        let ctx = strategist_context(&self.template, frame, row, prior, news, &self.options)?;
        let prompt = self.template.render(&ctx)?;
        audit_prompt(&self.anonymizer, &prompt)?;
        let key = UsageKey::new(self.instrument.clone(), self.prompt_version.clone());
        let result = self.gateway.complete(&key, &prompt, &self.params)?;
        let date = frame.index()[row];
        let strategy = parse_strategy(&result.text, date)?;
        if result.tokens.is_empty() {
            return Err(GatewayError::Malformed {
                message: "completion carries no token log-probabilities".into(),
                body: result.text,
            });
        }
        let decision: Vec<TokenDistribution> = decision_tokens(&result.text, &result.tokens).into_iter().cloned().collect();
        let entropy = truncated_entropy(&decision)?;
        let signal = SignalFeature::from_strategy(&strategy, normalize_entropy(entropy)?)?;
        Ok(GeneratedStrategy {
            perplexity: perplexity(&result.token_logprobs())?,
            entropy,
            signal,
            strategy,
            news: news.unwrap_or(NewsSummary::NEUTRAL),
            prompt_sha256: prompt_digest(&prompt),
        })
    }

    /// Strategies at every block start in `[start, end]`, each conditioned on
    /// the previous one and on the news since the previous block start.
    pub fn generate_blocks(
        &self,
        frame: &FeatureFrame,
        start: usize,
        end: usize,
        news: &[NewsItem],
    ) -> Result<StrategistRun, GatewayError> {
        if end >= frame.len() || start > end {
            return Err(GatewayError::Argument(format!("block range {start}..={end} outside frame")));
        }
        let dates = frame.index();
        let uses_news = self.template.placeholders().contains("news_sentiment");
        let mut out: Vec<GeneratedStrategy> = Vec::new();
        let mut prev_row: Option<usize> = None;
        for b in block_starts(start, end) {
            let prior = match (out.last(), prev_row) {
                (Some(g), Some(p)) => {
                    let move_ = match (frame.value("Close", p), frame.value("Close", b)) {
                        (Some(a), Some(z)) if a > 0.0 => z / a - 1.0,
                        _ => 0.0,
                    };
                    Some(PriorStrategy {
                        direction: g.strategy.direction,
                        rationale: g.strategy.explanation.clone(),
                        realized_return: g.strategy.direction.sign() * move_,
                    })
                }
                _ => None,
            };
            let summary = if uses_news {
                let from = dates[b.saturating_sub(BLOCK_LEN)];
                let to = dates[b];
                let items: Vec<&NewsItem> = news
                    .iter()
                    .filter(|n| n.date <= to && (n.date > from || b < BLOCK_LEN))
                    .collect();
                Some(self.news_summary(&items, to)?)
            } else {
                None
            };
            out.push(self.generate_at(frame, b, prior.as_ref(), summary)?);
            prev_row = Some(b);
        }
        Ok(StrategistRun {
            instrument: self.instrument.clone(),
            prompt_version: self.prompt_version.clone(),
            strategies: out,
        })
    }
}
