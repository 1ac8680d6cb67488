//! Prompt refinement: exemplar distillation and the writer/judge loop.
//!
//! The loop keeps `V* = max(V_baseline, 0.8)` and the running regret
//! `sum_t (V* - V_t)` over candidate Sharpe ratios. It stops when a candidate
//! beats `V*`, when regret drops to zero or below, or after `T_max` rounds.
//! The writer only ever sees the best and worst entries of the knowledge
//! base.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::direction::Direction;
use crate::eval::annualized_sharpe;
use crate::frame::FeatureFrame;
use crate::gateway::{
    CompletionBackend, CompletionParams, GatewayError, PromptTemplate, StrategyGenerator, JUDGE_MARKER, TEMPLATE_CLOSE,
    TEMPLATE_OPEN, WRITER_MARKER,
};
use crate::ingest::NewsItem;
use crate::labeler::TradeLabel;
use crate::signal::Strategy;

pub const DEFAULT_T_MAX: usize = 3;
pub const V_STAR_FLOOR: f64 = 0.8;
pub const MAX_INSTRUCTIONS: usize = 10;
/// Trading days in one tuning window.
pub const WINDOW_LEN: usize = 252;

#[derive(Debug, thiserror::Error)]
pub enum TunerError {
    #[error("argument error: {0}")]
    Argument(String),
    #[error("sampling error: {0}")]
    Sampling(String),
    #[error("knowledge base: {0}")]
    Kb(String),
    #[error("backtest failed: {0}")]
    Backtest(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbEntry {
    pub iteration: usize,
    pub prompt: String,
    pub features: Vec<String>,
    pub instructions: Vec<String>,
    /// `None` when the backtest (or the candidate itself) failed.
    pub sr: Option<f64>,
    pub critique: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// Append-only log of tuning iterations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    entries: Vec<KbEntry>,
}

impl KnowledgeBase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, entry: KbEntry) -> Result<(), TunerError> {
        if let Some(last) = self.entries.last() {
            if entry.iteration <= last.iteration {
                return Err(TunerError::Kb(format!(
                    "iteration {} does not follow {}",
                    entry.iteration, last.iteration
                )));
            }
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> &[KbEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn next_iteration(&self) -> usize {
        self.entries.last().map_or(1, |e| e.iteration + 1)
    }

    pub fn extremes(&self) -> Option<ExtremesMemory> {
        let ok = || self.entries.iter().filter(|e| e.sr.is_some());
        // first entry wins ties
        let best = ok().fold(None::<&KbEntry>, |acc, e| match acc {
            Some(b) if b.sr >= e.sr => Some(b),
            _ => Some(e),
        })?;
        let worst = ok().fold(None::<&KbEntry>, |acc, e| match acc {
            Some(w) if w.sr <= e.sr => Some(w),
            _ => Some(e),
        })?;
        Some(ExtremesMemory {
            best: best.clone(),
            worst: worst.clone(),
        })
    }

    /// One JSON object per line.
    pub fn write_ndjson<W: Write>(&self, mut w: W) -> Result<(), TunerError> {
        for e in &self.entries {
            let line = serde_json::to_string(e).map_err(|e| TunerError::Kb(e.to_string()))?;
            writeln!(w, "{line}").map_err(|e| TunerError::Kb(e.to_string()))?;
        }
        Ok(())
    }

    pub fn read_ndjson<R: BufRead>(r: R) -> Result<Self, TunerError> {
        let mut kb = KnowledgeBase::new();
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| TunerError::Kb(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: KbEntry =
                serde_json::from_str(&line).map_err(|e| TunerError::Kb(format!("line {}: {e}", i + 1)))?;
            kb.append(entry)?;
        }
        Ok(kb)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremesMemory {
    pub best: KbEntry,
    pub worst: KbEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretState {
    pub v_star: f64,
    pub history: Vec<f64>,
    pub t_max: usize,
}

impl RegretState {
    /// `V* = max(baseline, 0.8)`.
    pub fn new(baseline_sr: f64, t_max: usize) -> Self {
        RegretState {
            v_star: baseline_sr.max(V_STAR_FLOOR),
            history: Vec::new(),
            t_max,
        }
    }
}

/// `sum_t (V* - V_t)`; zero for an empty history.
pub fn regret(state: &RegretState) -> f64 {
    state.history.iter().map(|v| state.v_star - v).sum()
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_linear(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Features whose mean Likert importance reaches the 75th percentile of all
/// mean importances. Output keeps first-appearance order.
pub fn select_features(rankings: &[(String, u8)]) -> Result<Vec<String>, TunerError> {
    if rankings.is_empty() {
        return Err(TunerError::Argument("no feature rankings".into()));
    }
    let mut order: Vec<&str> = Vec::new();
    let mut sums: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for (f, w) in rankings {
        if !(1..=3).contains(w) {
            return Err(TunerError::Argument(format!("importance {w} for {f} outside 1..=3")));
        }
        let e = sums.entry(f.as_str()).or_insert_with(|| {
            order.push(f.as_str());
            (0.0, 0)
        });
        e.0 += *w as f64;
        e.1 += 1;
    }
    let means: BTreeMap<&str, f64> = sums.iter().map(|(k, (s, n))| (*k, s / *n as f64)).collect();
    let mut sorted: Vec<f64> = means.values().copied().collect();
    sorted.sort_by(f64::total_cmp);
    let cut = quantile_linear(&sorted, 0.75);
    Ok(order
        .into_iter()
        .filter(|f| means[f] >= cut - 1e-12)
        .map(str::to_string)
        .collect())
}

fn normalize(text: &str) -> String {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

fn jaccard_distance(a: &BTreeSet<&str>, b: &BTreeSet<&str>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    1.0 - a.intersection(b).count() as f64 / union as f64
}

/// Dedupes rationales on normalized text, then picks up to ten by greedy
/// farthest-point selection on word-set Jaccard distance, starting from the
/// first and breaking ties toward earlier rationales. Selection stops early
/// once every remaining rationale repeats a chosen word set.
pub fn distill_instructions(rationales: &[String]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut unique: Vec<(&str, String)> = Vec::new();
    for r in rationales {
        let n = normalize(r);
        if !n.is_empty() && seen.insert(n.clone()) {
            unique.push((r.trim(), n));
        }
    }
    if unique.is_empty() {
        return Vec::new();
    }
    let sets: Vec<BTreeSet<&str>> = unique.iter().map(|(_, n)| n.split(' ').collect()).collect();
    let mut chosen = vec![0usize];
    let mut min_dist: Vec<f64> = sets.iter().map(|s| jaccard_distance(s, &sets[0])).collect();
    while chosen.len() < MAX_INSTRUCTIONS {
        let mut best: Option<(usize, f64)> = None;
        for (i, d) in min_dist.iter().enumerate() {
            if chosen.contains(&i) {
                continue;
            }
            if best.is_none_or(|(_, bd)| *d > bd) {
                best = Some((i, *d));
            }
        }
        match best {
            Some((i, d)) if d > 0.0 => {
                chosen.push(i);
                for (j, m) in min_dist.iter_mut().enumerate() {
                    *m = m.min(jaccard_distance(&sets[j], &sets[i]));
                }
            }
            _ => break,
        }
    }
    chosen.into_iter().map(|i| unique[i].0.to_string()).collect()
}

/// Rankings and rationales from strategies that agree with the expert label
/// on their date.
pub fn exemplar_evidence(strategies: &[Strategy], labels: &[TradeLabel]) -> (Vec<(String, u8)>, Vec<String>) {
    let by_date: BTreeMap<NaiveDate, Direction> = labels.iter().filter_map(|l| l.date.map(|d| (d, l.action))).collect();
    let mut rankings = Vec::new();
    let mut rationales = Vec::new();
    for s in strategies {
        if by_date.get(&s.date) == Some(&s.direction) {
            rankings.extend(s.features_used.iter().map(|f| (f.feature.clone(), f.weight)));
            rationales.push(s.explanation.clone());
        }
    }
    (rankings, rationales)
}

/// Hand-annotated labels replace heuristic ones on the dates they cover.
pub fn merge_labels(heuristic: &[TradeLabel], annotated: &[TradeLabel]) -> Vec<TradeLabel> {
    let over: BTreeMap<NaiveDate, &TradeLabel> = annotated.iter().filter_map(|l| l.date.map(|d| (d, l))).collect();
    heuristic
        .iter()
        .map(|l| match l.date.and_then(|d| over.get(&d)) {
            Some(a) => (*a).clone(),
            None => l.clone(),
        })
        .collect()
}

/// Scores a candidate template; any error marks the iteration failed.
pub trait Backtester {
    fn backtest(&mut self, template: &PromptTemplate) -> Result<f64, String>;
}

impl<F: FnMut(&PromptTemplate) -> Result<f64, String>> Backtester for F {
    fn backtest(&mut self, template: &PromptTemplate) -> Result<f64, String> {
        self(template)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    TargetExceeded,
    NoExpectedImprovement,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneOutcome {
    pub best_prompt: String,
    pub best_sr: Option<f64>,
    pub iterations: usize,
    /// Regret after each iteration.
    pub regret_trace: Vec<f64>,
    pub stop: StopReason,
}

fn indent_block(text: &str) -> String {
    text.lines().map(|l| format!("    {l}")).collect::<Vec<_>>().join("\n")
}

fn writer_prompt(
    base: &str,
    features: &[String],
    instructions: &[String],
    extremes: Option<&ExtremesMemory>,
    v_star: f64,
) -> String {
    let mut s = format!(
        "{WRITER_MARKER}\n  Role: Prompt writer for a monthly LONG/SHORT strategist\n  Target_SR: {v_star:.3}\n  Selected_Features:\n"
    );
    for f in features {
        s.push_str(&format!("    - {f}\n"));
    }
    s.push_str("  Instructions_Pool:\n");
    for i in instructions {
        s.push_str(&format!("    - {}\n", i.replace(['\n', '\r'], " ")));
    }
    s.push_str("  Extremes_Memory:\n");
    match extremes {
        Some(x) => {
            for (label, e) in [("Best", &x.best), ("Worst", &x.worst)] {
                s.push_str(&format!(
                    "    {label}:\n      SR: {:.3}\n      Critique: {}\n",
                    e.sr.unwrap_or(f64::NAN),
                    e.critique.replace(['\n', '\r'], " ")
                ));
            }
        }
        None => s.push_str("    None yet\n"),
    }
    s.push_str(&format!(
        "  Task: Rewrite the template below so that it keeps every placeholder, uses the selected features and folds in the most useful instructions. Return only the template between the markers.\n{TEMPLATE_OPEN}\n{base}\n{TEMPLATE_CLOSE}\n"
    ));
    s
}

fn judge_prompt(candidate: &str, sr: Option<f64>, features: &[String]) -> String {
    let mut s = format!(
        "{JUDGE_MARKER}\n  Role: Judge of trading-strategy prompts\n  Backtest_SR: {}\n  Selected_Features:\n",
        sr.map_or("failed".to_string(), |v| format!("{v:.3}"))
    );
    for f in features {
        s.push_str(&format!("    - {f}\n"));
    }
    s.push_str(&format!(
        "  Task: Critique the rationale the prompt elicits and suggest alternative instructions or feature combinations.\n  Candidate: |\n{}\n",
        indent_block(candidate)
    ));
    s
}

fn extract_template(text: &str) -> &str {
    match (text.find(TEMPLATE_OPEN), text.rfind(TEMPLATE_CLOSE)) {
        (Some(a), Some(b)) if a + TEMPLATE_OPEN.len() <= b => text[a + TEMPLATE_OPEN.len()..b].trim_matches('\n'),
        _ => text.trim(),
    }
}

pub struct TuneInputs<'a> {
    pub base: &'a PromptTemplate,
    pub features: &'a [String],
    pub instructions: &'a [String],
    pub params: CompletionParams,
}

/// Writer/judge loop. Appends one KB entry per iteration.
pub fn tune(
    writer: &dyn CompletionBackend,
    judge: &dyn CompletionBackend,
    backtest: &mut dyn Backtester,
    state: &mut RegretState,
    kb: &mut KnowledgeBase,
    inputs: &TuneInputs<'_>,
) -> Result<TuneOutcome, TunerError> {
    if state.t_max == 0 {
        return Err(TunerError::Argument("T_max must be at least 1".into()));
    }
    let mut trace = Vec::new();
    let mut stop = StopReason::MaxIterations;
    let mut iterations = 0;
    for _ in 0..state.t_max {
        let extremes = kb.extremes();
        let base_text = extremes.as_ref().map_or(inputs.base.text(), |x| x.best.prompt.as_str());
        let wp = writer_prompt(base_text, inputs.features, inputs.instructions, extremes.as_ref(), state.v_star);
        let written = writer.complete(&wp, &inputs.params)?;
        let candidate_text = extract_template(&written.text).to_string();
        let (sr, failure) = match PromptTemplate::parse(&candidate_text) {
            Ok(t) => match backtest.backtest(&t) {
                Ok(v) if v.is_finite() => (Some(v), None),
                Ok(v) => (None, Some(format!("non-finite SR {v}"))),
                Err(e) => (None, Some(e)),
            },
            Err(e) => (None, Some(e.to_string())),
        };
        if let Some(f) = &failure {
            log::warn!("tuning iteration {} failed: {f}", kb.next_iteration());
        }
        let critique = judge.complete(&judge_prompt(&candidate_text, sr, inputs.features), &inputs.params)?.text;
        kb.append(KbEntry {
            iteration: kb.next_iteration(),
            prompt: candidate_text,
            features: inputs.features.to_vec(),
            instructions: inputs.instructions.to_vec(),
            sr,
            critique,
            failure,
        })?;
        iterations += 1;
        if let Some(v) = sr {
            state.history.push(v);
        }
        let r = regret(state);
        trace.push(r);
        if sr.is_some_and(|v| v > state.v_star) {
            stop = StopReason::TargetExceeded;
            break;
        }
        if !state.history.is_empty() && r <= 0.0 {
            stop = StopReason::NoExpectedImprovement;
            break;
        }
    }
    let best = kb.extremes().map(|x| x.best);
    Ok(TuneOutcome {
        best_prompt: best.as_ref().map_or_else(|| inputs.base.text().to_string(), |b| b.prompt.clone()),
        best_sr: best.and_then(|b| b.sr),
        iterations,
        regret_trace: trace,
        stop,
    })
}

/// `n` disjoint windows of `length` rows, drawn without replacement from the
/// `len / length` slots that follow a random offset. Returns row ranges
/// `(first, last)` inclusive.
pub fn sample_tuning_windows(
    len: usize,
    n_windows: usize,
    length: usize,
    seed: u64,
) -> Result<Vec<(usize, usize)>, TunerError> {
    if length == 0 || n_windows == 0 {
        return Err(TunerError::Argument("window count and length must be positive".into()));
    }
    let slots = len / length;
    if slots < n_windows {
        return Err(TunerError::Sampling(format!(
            "{len} rows hold {slots} windows of {length}; {n_windows} requested"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = rand::Rng::gen_range(&mut rng, 0..=len - slots * length);
    let mut picks = rand::seq::index::sample(&mut rng, slots, n_windows).into_vec();
    picks.sort_unstable();
    Ok(picks
        .into_iter()
        .map(|k| (offset + k * length, offset + (k + 1) * length - 1))
        .collect())
}

/// As [`sample_tuning_windows`], as date ranges.
pub fn sample_tuning_dates(
    dates: &[NaiveDate],
    n_windows: usize,
    length: usize,
    seed: u64,
) -> Result<Vec<(NaiveDate, NaiveDate)>, TunerError> {
    Ok(sample_tuning_windows(dates.len(), n_windows, length, seed)?
        .into_iter()
        .map(|(a, b)| (dates[a], dates[b]))
        .collect())
}

/// Daily returns of holding each monthly strategy's direction until the next
/// one, over rows `start..=end`.
pub fn direction_returns(closes: &[f64], directions: &[(usize, Direction)], start: usize, end: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(end.saturating_sub(start));
    let mut k = 0;
    for t in start..end {
        while k + 1 < directions.len() && directions[k + 1].0 <= t {
            k += 1;
        }
        let sign = match directions.get(k) {
            Some(&(row, d)) if row <= t => d.sign(),
            _ => 0.0,
        };
        out.push(sign * (closes[t + 1] / closes[t] - 1.0));
    }
    out
}

/// Annualized SR of trading the generated directions directly (no agent).
pub fn prompt_backtest(
    generator: &StrategyGenerator<'_>,
    frame: &FeatureFrame,
    start: usize,
    end: usize,
    news: &[NewsItem],
) -> Result<f64, TunerError> {
    let run = generator.generate_blocks(frame, start, end, news)?;
    let closes: Vec<f64> = frame
        .column("Close")
        .ok_or_else(|| TunerError::Backtest("frame has no Close column".into()))?
        .iter()
        .map(|v| v.unwrap_or(f64::NAN))
        .collect();
    let dirs: Vec<(usize, Direction)> = crate::gateway::block_starts(start, end)
        .into_iter()
        .zip(run.strategies.iter().map(|s| s.strategy.direction))
        .collect();
    let rets = direction_returns(&closes, &dirs, start, end);
    annualized_sharpe(&rets).map_err(|e| TunerError::Backtest(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{PromptVersion, StubBackend};

    fn entry(i: usize, sr: Option<f64>) -> KbEntry {
        KbEntry {
            iteration: i,
            prompt: format!("p{i}"),
            features: vec![],
            instructions: vec![],
            sr,
            critique: String::new(),
            failure: None,
        }
    }

    #[test]
    fn regret_examples() {
        let mut s = RegretState::new(0.3, 3);
        assert_eq!(s.v_star, 0.8);
        assert_eq!(regret(&s), 0.0);
        s.history = vec![0.5, 0.7];
        assert!((regret(&s) - 0.4).abs() < 1e-12);
        s.history = vec![0.8, 1.2];
        assert!(regret(&s) <= 0.0);
        assert_eq!(RegretState::new(1.1, 3).v_star, 1.1);
    }

    #[test]
    fn feature_quartile() {
        let r: Vec<(String, u8)> = [("a", 3), ("b", 2), ("c", 2), ("d", 1)]
            .iter()
            .map(|(f, w)| (f.to_string(), *w))
            .collect();
        assert_eq!(select_features(&r).unwrap(), vec!["a"]);
        let eq: Vec<(String, u8)> = ["a", "b", "c"].iter().map(|f| (f.to_string(), 2)).collect();
        assert_eq!(select_features(&eq).unwrap().len(), 3);
        assert_eq!(select_features(&[("x".into(), 1)]).unwrap(), vec!["x"]);
        assert!(select_features(&[]).is_err());
    }

    #[test]
    fn distill_small_cases() {
        let three: Vec<String> = ["RSI above 70 warns of reversal", "MACD crossover confirms trend", "Low debt supports longs"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(distill_instructions(&three).len(), 3);
        let copies = vec!["Same rationale.".to_string(); 15];
        assert_eq!(distill_instructions(&copies), vec!["Same rationale."]);
    }

    #[test]
    fn kb_append_only_and_extremes() {
        let mut kb = KnowledgeBase::new();
        kb.append(entry(1, Some(0.6))).unwrap();
        kb.append(entry(2, Some(0.2))).unwrap();
        assert!(kb.append(entry(2, Some(0.1))).is_err());
        let x = kb.extremes().unwrap();
        assert_eq!((x.best.iteration, x.worst.iteration), (1, 2));
        let mut buf = Vec::new();
        kb.write_ndjson(&mut buf).unwrap();
        assert_eq!(KnowledgeBase::read_ndjson(buf.as_slice()).unwrap(), kb);
    }

    fn run_scripted(srs: &[f64]) -> (TuneOutcome, KnowledgeBase) {
        let stub = StubBackend::new();
        let base = PromptVersion::P1.template();
        let mut queue: Vec<f64> = srs.to_vec();
        let mut bt = |_: &PromptTemplate| Ok(queue.remove(0));
        let mut state = RegretState::new(0.0, DEFAULT_T_MAX);
        let mut kb = KnowledgeBase::new();
        let inputs = TuneInputs {
            base: &base,
            features: &["RSI".to_string()],
            instructions: &["Weigh momentum".to_string()],
            params: CompletionParams::TUNING,
        };
        let out = tune(&stub, &stub, &mut bt, &mut state, &mut kb, &inputs).unwrap();
        (out, kb)
    }

    #[test]
    fn loop_termination() {
        let (out, kb) = run_scripted(&[0.9]);
        assert_eq!((out.iterations, out.stop), (1, StopReason::TargetExceeded));
        assert_eq!(kb.len(), 1);

        let (out, kb) = run_scripted(&[0.3, 0.5, 0.6]);
        assert_eq!((out.iterations, out.stop), (3, StopReason::MaxIterations));
        // (0.8 - 0.3) + (0.8 - 0.5) + (0.8 - 0.6)
        assert!((out.regret_trace[2] - 1.0).abs() < 1e-12);
        assert_eq!(out.best_sr, Some(0.6));
        assert_eq!(out.best_prompt, kb.entries()[2].prompt);

        let (_, kb) = run_scripted(&[0.6, 0.2, 0.7]);
        let x = kb.extremes().unwrap();
        assert_eq!((x.best.sr, x.worst.sr), (Some(0.7), Some(0.2)));
    }

    #[test]
    fn failed_backtest_skipped_from_extremes() {
        let stub = StubBackend::new();
        let base = PromptVersion::P0.template();
        let mut n = 0;
        let mut bt = |_: &PromptTemplate| {
            n += 1;
            if n == 2 {
                Err("no data".to_string())
            } else {
                Ok(0.1 * n as f64)
            }
        };
        let mut state = RegretState::new(0.0, 3);
        let mut kb = KnowledgeBase::new();
        let inputs = TuneInputs {
            base: &base,
            features: &[],
            instructions: &[],
            params: CompletionParams::TUNING,
        };
        tune(&stub, &stub, &mut bt, &mut state, &mut kb, &inputs).unwrap();
        assert_eq!(kb.len(), 3);
        assert_eq!(kb.entries()[1].sr, None);
        assert!(kb.entries()[1].failure.is_some());
        assert_eq!(state.history.len(), 2);
        let x = kb.extremes().unwrap();
        assert_eq!((x.best.iteration, x.worst.iteration), (3, 1));
    }

    #[test]
    fn windows() {
        let w = sample_tuning_windows(8 * 252, 5, 252, 7).unwrap();
        assert_eq!(w.len(), 5);
        for pair in w.windows(2) {
            assert!(pair[0].1 < pair[1].0);
        }
        assert!(w.iter().all(|(a, b)| b - a + 1 == 252));
        assert_eq!(w, sample_tuning_windows(8 * 252, 5, 252, 7).unwrap());
        assert!(matches!(sample_tuning_windows(3 * 252, 5, 252, 7), Err(TunerError::Sampling(_))));
    }

    #[test]
    fn direction_returns_follow_blocks() {
        let closes = [100.0, 110.0, 99.0, 99.0];
        let r = direction_returns(&closes, &[(0, Direction::Long), (2, Direction::Short)], 0, 3);
        assert!((r[0] - 0.1).abs() < 1e-12);
        assert!((r[1] + 0.1).abs() < 1e-12);
        assert_eq!(r[2], 0.0);
    }
}
