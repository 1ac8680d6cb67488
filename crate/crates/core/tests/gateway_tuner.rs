use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use chrono::{Duration, NaiveDate};
use proptest::prelude::*;
use serde_json::json;

use guidedrl::gateway::{
    find_dates, read_transcripts, write_transcripts, Anonymizer, CompletionBackend, CompletionParams, Gateway,
    GatewayConfig, GatewayError, HttpBackend, HttpConfig, HttpResponse, PromptVersion, ReplayBackend,
    StrategyGenerator, StubBackend, Transport, UsageKey,
};
use guidedrl::tuner::{distill_instructions, select_features};
use guidedrl::FeatureFrame;

#[derive(Clone)]
struct Flaky {
    replies: Arc<Mutex<Vec<HttpResponse>>>,
    calls: Arc<Mutex<usize>>,
}

impl Transport for Flaky {
    fn post_json(&self, _: &str, _: &[(String, String)], _: &str) -> Result<HttpResponse, GatewayError> {
        *self.calls.lock().unwrap() += 1;
        let mut r = self.replies.lock().unwrap();
        if r.is_empty() {
            return Err(GatewayError::Transport("connection reset".into()));
        }
        Ok(r.remove(0))
    }
}

fn chat_body(text: &str) -> String {
    json!({
        "choices": [{"message": {"content": text}, "logprobs": {"content": [
            {"token": text, "logprob": -0.05, "top_logprobs": [{"token": text, "logprob": -0.05}]}
        ]}}],
        "usage": {"prompt_tokens": 40, "completion_tokens": 3}
    })
    .to_string()
}

#[test]
fn retried_http_call_is_metered_once() {
    let flaky = Flaky {
        replies: Arc::new(Mutex::new(vec![
            HttpResponse { status: 503, body: "busy".into() },
            HttpResponse { status: 429, body: "slow down".into() },
            HttpResponse { status: 200, body: chat_body("ok") },
        ])),
        calls: Arc::new(Mutex::new(0)),
    };
    let cfg = HttpConfig {
        base_delay_ms: 0,
        max_retries: 4,
        ..Default::default()
    };
    let backend = HttpBackend::with_transport(cfg, "secret", flaky.clone());
    let gw = Gateway::new(backend, GatewayConfig::default()).unwrap();
    let key = UsageKey::new("AAA", "P4");
    let r = gw.complete(&key, "prompt", &CompletionParams::GENERATION).unwrap();
    assert_eq!(r.text, "ok");
    assert_eq!(*flaky.calls.lock().unwrap(), 3);
    let t = gw.ledger().totals("AAA", "P4");
    assert_eq!((t.calls, t.prompt_tokens, t.completion_tokens), (1, 40, 3));
}

#[test]
fn exhausted_retries_surface_the_last_error() {
    let flaky = Flaky {
        replies: Arc::new(Mutex::new(vec![])),
        calls: Arc::new(Mutex::new(0)),
    };
    let cfg = HttpConfig {
        base_delay_ms: 0,
        max_retries: 2,
        ..Default::default()
    };
    let backend = HttpBackend::with_transport(cfg, "k", flaky.clone());
    let err = backend.complete("p", &CompletionParams::GENERATION).unwrap_err();
    assert!(matches!(err, GatewayError::Transport(_)), "{err}");
    assert_eq!(*flaky.calls.lock().unwrap(), 3);
}

fn synthetic_frame(n: usize) -> FeatureFrame {
    let d0 = NaiveDate::from_ymd_opt(2017, 3, 1).unwrap();
    let dates = (0..n as i64).map(|i| d0 + Duration::days(i)).collect();
    let closes: Vec<f64> = (0..n).map(|i| 100.0 + 5.0 * ((i as f64) * 0.15).sin() + 0.05 * i as f64).collect();
    let mut f = FeatureFrame::new(dates).unwrap();
    f.insert_dense("Close", &closes).unwrap();
    f.insert_dense("Volume", &vec![1.0e5; n]).unwrap();
    f
}

#[test]
fn replayed_transcripts_reproduce_a_run() {
    let frame = synthetic_frame(120);
    let live = Gateway::new(StubBackend::new(), GatewayConfig::default()).unwrap();
    let mut g = StrategyGenerator::new(&live, PromptVersion::P1.template(), "P1", "AAA");
    g.options.missing_as_na = true;
    let first = g.generate_blocks(&frame, 25, 100, &[]).unwrap();

    let mut buf = Vec::new();
    write_transcripts(&live.transcripts(), &mut buf).unwrap();
    let replay = ReplayBackend::new(read_transcripts(buf.as_slice()).unwrap());
    let offline = Gateway::new(replay, GatewayConfig::default()).unwrap();
    let mut g2 = StrategyGenerator::new(&offline, PromptVersion::P1.template(), "P1", "AAA");
    g2.options.missing_as_na = true;
    let second = g2.generate_blocks(&frame, 25, 100, &[]).unwrap();
    assert_eq!(first, second);
    assert_eq!(first.strategies.len(), 4);

    // A prompt the transcripts never saw is a miss, not a fabricated answer.
    let mut g3 = StrategyGenerator::new(&offline, PromptVersion::P2.template(), "P2", "AAA");
    g3.options.missing_as_na = true;
    assert!(g3.generate_blocks(&frame, 25, 100, &[]).is_err());
}

#[test]
fn stub_generation_is_deterministic() {
    let frame = synthetic_frame(90);
    let run = || {
        let gw = Gateway::new(StubBackend::new(), GatewayConfig::default()).unwrap();
        let mut g = StrategyGenerator::new(&gw, PromptVersion::P0.template(), "P0", "AAA");
        g.options.missing_as_na = true;
        serde_json::to_string(&g.generate_blocks(&frame, 10, 80, &[]).unwrap()).unwrap()
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn anonymized_text_passes_the_audit(
        filler in prop::collection::vec("[a-z]{1,8}", 1..12),
        y in 1990i32..2030,
        m in 1u32..=12,
        dd in 1u32..=28,
    ) {
        let map = BTreeMap::from([
            ("Globex".to_string(), "the Company".to_string()),
            ("GBX".to_string(), "the Company's stock".to_string()),
        ]);
        let a = Anonymizer::new(&map).unwrap();
        let date = NaiveDate::from_ymd_opt(y, m, dd).unwrap();
        let text = format!(
            "{} Globex said on {} that GBX {} globex",
            filler.join(" "),
            date.format("%Y-%m-%d"),
            filler.join(" ")
        );
        let out = a.anonymize(&text, Some(date + Duration::days(3)));
        prop_assert!(a.audit(out.as_str()).is_empty(), "{}", out.as_str());
        prop_assert!(find_dates(out.as_str()).is_empty());
    }
}

/// 25 rationales drawn from 10 topics with disjoint vocabularies.
fn clustered_rationales() -> (Vec<String>, Vec<usize>) {
    let topics = [
        ["rsi", "overbought", "reversal"],
        ["macd", "crossover", "bullish"],
        ["debt", "equity", "leverage"],
        ["vix", "fear", "spike"],
        ["eps", "growth", "earnings"],
        ["gdp", "pmi", "expansion"],
        ["skew", "options", "puts"],
        ["news", "sentiment", "headline"],
        ["slope", "moving", "average"],
        ["volatility", "historical", "calm"],
    ];
    let mut out = Vec::new();
    let mut topic_of = Vec::new();
    for i in 0..25 {
        let k = (i * 7) % 10;
        let w = topics[k];
        let variant = match i / 10 {
            0 => format!("{} {} {}", w[0], w[1], w[2]),
            1 => format!("{} {} strongly {}", w[0], w[2], w[1]),
            _ => format!("{} {}", w[1], w[0]),
        };
        out.push(variant);
        topic_of.push(k);
    }
    (out, topic_of)
}

#[test]
fn distillation_covers_every_topic_once() {
    let (rationales, topic_of) = clustered_rationales();
    let picked = distill_instructions(&rationales);
    assert_eq!(picked.len(), 10);
    let mut topics: Vec<usize> = picked
        .iter()
        .map(|p| topic_of[rationales.iter().position(|r| r == p).unwrap()])
        .collect();
    topics.sort();
    assert_eq!(topics, (0..10).collect::<Vec<_>>());
    // Farthest-point selection starts at the first rationale.
    assert_eq!(picked[0], rationales[0]);
}

#[test]
fn feature_selection_keeps_the_upper_quartile() {
    // Means: A 3.0, B 2.5, C 2.0, D 1.5, E 1.0 -> 75th percentile 2.5.
    let r: Vec<(String, u8)> = [("A", 3), ("B", 3), ("B", 2), ("C", 2), ("D", 1), ("D", 2), ("E", 1)]
        .iter()
        .map(|(f, w)| (f.to_string(), *w))
        .collect();
    assert_eq!(select_features(&r).unwrap(), vec!["A", "B"]);
}
