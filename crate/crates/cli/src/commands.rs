//! One function per subcommand. Each reads the artifacts of earlier stages
//! from `<output>/<instrument>/<stage>/` and writes its own directory with a
//! manifest.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use guidedrl::agent::{self, evaluate_greedy, Checkpoint, EnvPair, RunRecord};
use guidedrl::env::{write_trace_csv, EnvError, EpisodeConfig, TradingEnv};
use guidedrl::eval::{self, annualized_sharpe, RunMetrics};
use guidedrl::features::technical_indicators;
use guidedrl::gateway::{
    read_transcripts, write_transcripts, Anonymizer, CompletionBackend, CompletionParams, ContextOptions, Gateway,
    HttpBackend, Metered, PromptTemplate, ReplayBackend, StrategistRun, StrategyGenerator, StubBackend, UsageKey,
    UsageLedger,
};
use guidedrl::ingest::{align_by_timestamp, load_news, load_ohlcv, AlignPolicy, MacroSeries, NewsItem};
use guidedrl::labeler::{label_dated, read_labels_csv, write_labels_csv, TradeLabel};
use guidedrl::signal::{read_signals_csv, write_signals_csv, SignalFeature, SignalMode};
use guidedrl::tuner::{
    self, direction_returns, distill_instructions, exemplar_evidence, merge_labels, prompt_backtest,
    sample_tuning_windows, select_features, KnowledgeBase, RegretState, StopReason, TuneInputs,
};
use guidedrl::FeatureFrame;

use crate::config::{BackendKind, RunConfig};
use crate::manifest::ArtifactDir;
use crate::{fail, resolve, CliError};

pub struct Context {
    pub cfg: RunConfig,
    pub workspace: PathBuf,
    pub argv: Vec<String>,
}

fn missing(what: &str, path: &Path, hint: &str) -> CliError {
    CliError::Pipeline {
        module: "cli",
        message: format!("{what} not found at {}; run `{hint}` first", path.display()),
    }
}

fn open(path: &Path, hint: &str) -> Result<File, CliError> {
    File::open(path).map_err(|_| missing("input", path, hint))
}

fn csv_bytes<F>(write: F) -> Result<Vec<u8>, CliError>
where
    F: FnOnce(&mut Vec<u8>) -> Result<(), String>,
{
    let mut buf = Vec::new();
    write(&mut buf).map_err(|m| CliError::Pipeline { module: "cli", message: m })?;
    Ok(buf)
}

impl Context {
    pub fn new(cfg: RunConfig, workspace: PathBuf, argv: Vec<String>) -> Self {
        Context { cfg, workspace, argv }
    }

    fn path(&self, p: &Path) -> PathBuf {
        resolve(&self.workspace, p)
    }

    fn root(&self) -> PathBuf {
        self.path(&self.cfg.output)
    }

    fn stage(&self, parts: &[&str]) -> PathBuf {
        let mut p = self.root().join(&self.cfg.instrument);
        for s in parts {
            p = p.join(s);
        }
        p
    }

    fn finish(&self, dir: ArtifactDir, command: &str, seeds: Vec<u64>) -> Result<PathBuf, CliError> {
        dir.finish(command, &self.argv, &self.cfg.resolved, seeds)
    }

    fn frame(&self) -> Result<FeatureFrame, CliError> {
        let p = self.stage(&["features", "features.csv"]);
        FeatureFrame::read_csv(open(&p, "features")?).map_err(fail("feature_engine"))
    }

    fn labels(&self) -> Result<Vec<TradeLabel>, CliError> {
        let p = self.stage(&["labels", "labels.csv"]);
        read_labels_csv(open(&p, "label")?).map_err(fail("labeler"))
    }

    fn news(&self) -> Result<Vec<NewsItem>, CliError> {
        let p = self.stage(&["ingest", "news.json"]);
        if !p.exists() {
            return Ok(Vec::new());
        }
        serde_json::from_reader(BufReader::new(open(&p, "ingest")?)).map_err(fail("data_ingest"))
    }

    fn gateway(&self) -> Result<Gateway, CliError> {
        let backend: Box<dyn CompletionBackend> = match self.cfg.backend {
            BackendKind::Stub => Box::new(StubBackend::new()),
            BackendKind::Http => Box::new(HttpBackend::from_env(self.cfg.http.clone()).map_err(fail("llm_gateway"))?),
            BackendKind::Replay => {
                let p = self.path(self.cfg.replay_path.as_ref().expect("validated with the config"));
                let f = File::open(&p).map_err(|e| CliError::Pipeline {
                    module: "llm_gateway",
                    message: format!("cannot open transcripts {}: {e}", p.display()),
                })?;
                Box::new(ReplayBackend::new(read_transcripts(BufReader::new(f)).map_err(fail("llm_gateway"))?))
            }
        };
        Gateway::new(BoxedBackend(backend), self.cfg.gateway).map_err(fail("llm_gateway"))
    }

    fn tune_dir(&self) -> PathBuf {
        self.stage(&["tune", self.cfg.prompt_version.as_str()])
    }

    fn generate_dir(&self) -> PathBuf {
        self.stage(&["generate", self.cfg.prompt_version.as_str()])
    }

    /// The tuned prompt when one exists and is wanted, else the built-in
    /// template for the configured version.
    fn strategist_template(&self) -> Result<(PromptTemplate, Option<PathBuf>), CliError> {
        let tuned = self.tune_dir().join("best_prompt.txt");
        if self.cfg.use_tuned_prompt && tuned.exists() {
            let text = std::fs::read_to_string(&tuned).map_err(fail("prompt_tuner"))?;
            let t = PromptTemplate::parse(&text).map_err(fail("prompt_tuner"))?;
            return Ok((t, Some(tuned)));
        }
        Ok((self.cfg.prompt_version.template(), None))
    }

    fn generator<'g>(&self, gw: &'g Gateway, template: PromptTemplate) -> Result<StrategyGenerator<'g>, CliError> {
        let mut g = StrategyGenerator::new(gw, template, self.cfg.prompt_version.as_str(), &self.cfg.instrument);
        let mut opts = ContextOptions {
            missing_as_na: self.cfg.missing_as_na,
            static_fields: self.cfg.static_fields.clone(),
            ..ContextOptions::default()
        };
        if let Some(p) = &self.cfg.persona {
            opts.persona = p.clone();
        }
        if let Some(o) = &self.cfg.objectives {
            opts.portfolio_objectives = o.clone();
        }
        g.options = opts;
        g.anonymizer = Anonymizer::new(&self.cfg.entities).map_err(fail("llm_gateway"))?;
        Ok(g)
    }

    fn signals(&self, segment: &str) -> Result<Vec<SignalFeature>, CliError> {
        let p = self.generate_dir().join(format!("signals_{segment}.csv"));
        read_signals_csv(open(&p, "generate")?).map_err(fail("signal_math"))
    }

    /// Train and OOS environments with the configured guidance attached.
    fn env_pair(&self, frame: &FeatureFrame) -> Result<EnvPair, CliError> {
        let env_err = fail::<EnvError>("trading_env");
        let mut train = TradingEnv::new(frame, self.cfg.train_episode()).map_err(&env_err)?;
        let mut test = TradingEnv::new(frame, self.cfg.oos_episode()).map_err(&env_err)?;
        if self.cfg.tau != SignalMode::Off {
            train.attach_signals(&self.signals("train")?, self.cfg.tau).map_err(&env_err)?;
            test.attach_signals(&self.signals("oos")?, self.cfg.tau).map_err(&env_err)?;
        }
        Ok(EnvPair { train, test })
    }

    fn train_dir(&self, condition: &str) -> PathBuf {
        self.stage(&["train", condition])
    }
}

struct BoxedBackend(Box<dyn CompletionBackend>);

impl CompletionBackend for BoxedBackend {
    fn complete(
        &self,
        prompt: &str,
        params: &CompletionParams,
    ) -> Result<guidedrl::gateway::CompletionResult, guidedrl::gateway::GatewayError> {
        self.0.complete(prompt, params)
    }

    fn name(&self) -> &str {
        self.0.name()
    }
}

pub fn ingest(ctx: &Context) -> Result<String, CliError> {
    let cfg = &ctx.cfg;
    let src = cfg
        .ohlcv
        .as_ref()
        .ok_or_else(|| CliError::Usage("data.ohlcv is not set".into()))?;
    let mut dir = ArtifactDir::create(ctx.stage(&["ingest"]))?;
    let src = ctx.path(src);
    dir.input(&src);
    let bars = load_ohlcv(&src).map_err(fail("data_ingest"))?;
    let mut frames = vec![bars.to_frame()];
    for m in &cfg.macros {
        let p = ctx.path(&m.path);
        dir.input(&p);
        let series = MacroSeries::load(&p, m.name.clone(), m.frequency).map_err(fail("data_ingest"))?;
        if let Some(lag) = m.pct_change {
            let change = series
                .pct_change(lag, format!("{}_Change", m.name))
                .map_err(fail("data_ingest"))?;
            frames.push(change.to_frame());
        }
        frames.push(series.to_frame());
    }
    let market = align_by_timestamp(&frames, cfg.align).map_err(fail("data_ingest"))?;
    let bars_csv = csv_bytes(|b| bars.write_csv(b).map_err(|e| e.to_string()))?;
    dir.write("bars.csv", &bars_csv)?;
    let market_csv = csv_bytes(|b| market.write_csv(b).map_err(|e| e.to_string()))?;
    dir.write("market.csv", &market_csv)?;
    let mut n_news = 0;
    if let Some(p) = &cfg.news {
        let p = ctx.path(p);
        dir.input(&p);
        let items = load_news(&p).map_err(fail("data_ingest"))?;
        n_news = items.len();
        dir.write_json("news.json", &items)?;
    }
    let out = ctx.finish(dir, "ingest", vec![])?;
    Ok(format!(
        "ingested {} bars, {} columns, {n_news} news items into {}",
        market.len(),
        market.columns().len(),
        out.display()
    ))
}

pub fn features(ctx: &Context) -> Result<String, CliError> {
    let bars_path = ctx.stage(&["ingest", "bars.csv"]);
    let market_path = ctx.stage(&["ingest", "market.csv"]);
    open(&bars_path, "ingest")?;
    let bars = load_ohlcv(&bars_path).map_err(fail("data_ingest"))?;
    let market = FeatureFrame::read_csv(open(&market_path, "ingest")?).map_err(fail("data_ingest"))?;
    let ind = technical_indicators(&bars, &ctx.cfg.indicators).map_err(fail("feature_engine"))?;
    let mut extra = FeatureFrame::new(ind.index().to_vec()).map_err(fail("feature_engine"))?;
    for (name, col) in ind.columns() {
        if market.column(name).is_none() {
            extra.insert(name.clone(), col.clone()).map_err(fail("feature_engine"))?;
        }
    }
    let frame = align_by_timestamp(&[market, extra], AlignPolicy::Inner).map_err(fail("feature_engine"))?;
    let mut dir = ArtifactDir::create(ctx.stage(&["features"]))?;
    dir.input(&bars_path);
    dir.input(&market_path);
    let bytes = csv_bytes(|b| frame.write_csv(b).map_err(|e| e.to_string()))?;
    dir.write("features.csv", &bytes)?;
    let out = ctx.finish(dir, "features", vec![])?;
    Ok(format!("{} rows x {} features into {}", frame.len(), frame.columns().len(), out.display()))
}

pub fn label(ctx: &Context) -> Result<String, CliError> {
    let bars_path = ctx.stage(&["ingest", "bars.csv"]);
    open(&bars_path, "ingest")?;
    let bars = load_ohlcv(&bars_path).map_err(fail("data_ingest"))?;
    let mut labels = label_dated(&bars.dates(), &bars.closes()).map_err(fail("labeler"))?;
    let mut dir = ArtifactDir::create(ctx.stage(&["labels"]))?;
    dir.input(&bars_path);
    let mut annotated = 0;
    if let Some(p) = &ctx.cfg.hitl_labels {
        let p = ctx.path(p);
        dir.input(&p);
        let f = File::open(&p).map_err(|e| CliError::Pipeline {
            module: "labeler",
            message: format!("cannot open {}: {e}", p.display()),
        })?;
        let manual = read_labels_csv(f).map_err(fail("labeler"))?;
        annotated = manual.len();
        labels = merge_labels(&labels, &manual);
    }
    let bytes = csv_bytes(|b| write_labels_csv(&labels, b).map_err(|e| e.to_string()))?;
    dir.write("labels.csv", &bytes)?;
    let longs = labels.iter().filter(|l| l.action == guidedrl::Direction::Long).count();
    let out = ctx.finish(dir, "label", vec![])?;
    Ok(format!(
        "{} labels ({longs} LONG, {annotated} annotated overrides) into {}",
        labels.len(),
        out.display()
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RepeatSummary {
    repeat: usize,
    window: (NaiveDate, NaiveDate),
    baseline_sr: Option<f64>,
    v_star: f64,
    features: Vec<String>,
    instructions: Vec<String>,
    iteration_srs: Vec<Option<f64>>,
    regret_trace: Vec<f64>,
    stop: StopReason,
    best_sr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TuneState {
    seed: u64,
    windows: Vec<(NaiveDate, NaiveDate)>,
    repeats: Vec<RepeatSummary>,
}

fn run_sharpe(frame: &FeatureFrame, run: &StrategistRun, start: usize, end: usize) -> Option<f64> {
    let closes: Vec<f64> = frame.column("Close")?.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
    let dirs: Vec<(usize, guidedrl::Direction)> = guidedrl::gateway::block_starts(start, end)
        .into_iter()
        .zip(run.strategies.iter().map(|s| s.strategy.direction))
        .collect();
    annualized_sharpe(&direction_returns(&closes, &dirs, start, end)).ok()
}

pub fn tune(ctx: &Context) -> Result<String, CliError> {
    let cfg = &ctx.cfg;
    let frame = ctx.frame()?;
    let labels = ctx.labels()?;
    let news = ctx.news()?;
    let gw = ctx.gateway()?;
    let dates = frame.index();
    // Tuning windows never reach into the out-of-sample range.
    let pre_oos = match cfg.oos_range.0 {
        Some(d) => dates.partition_point(|x| *x < d),
        None => dates.len(),
    };
    let windows: Vec<(usize, usize)> = sample_tuning_windows(pre_oos, cfg.tune.windows, cfg.tune.window_len, cfg.seed)
        .map_err(fail("prompt_tuner"))?;
    let window_dates: Vec<(NaiveDate, NaiveDate)> = windows.iter().map(|&(a, b)| (dates[a], dates[b])).collect();

    let tdir = ctx.tune_dir();
    let state_path = tdir.join("state.json");
    let best_path = tdir.join("best_prompt.txt");
    let mut state = TuneState {
        seed: cfg.seed,
        windows: window_dates.clone(),
        repeats: Vec::new(),
    };
    let mut base = cfg.prompt_version.template_text().to_string();
    if let Ok(text) = std::fs::read_to_string(&state_path) {
        let prev: TuneState = serde_json::from_str(&text).map_err(fail("prompt_tuner"))?;
        if prev.windows == window_dates && prev.seed == cfg.seed && prev.repeats.len() < window_dates.len() {
            base = std::fs::read_to_string(&best_path).map_err(fail("prompt_tuner"))?;
            log::info!("resuming tuning after repeat {}", prev.repeats.len());
            state = prev;
        }
    }
    let mut dir = ArtifactDir::create(tdir)?;
    dir.input(&ctx.stage(&["features", "features.csv"]));
    dir.input(&ctx.stage(&["labels", "labels.csv"]));

    let writer = Metered {
        gateway: &gw,
        key: UsageKey::new(cfg.instrument.clone(), "writer"),
    };
    let judge = Metered {
        gateway: &gw,
        key: UsageKey::new(cfg.instrument.clone(), "judge"),
    };
    let mut paused = false;
    for k in state.repeats.len()..windows.len() {
        let (a, b) = windows[k];
        let base_t = PromptTemplate::parse(&base).map_err(fail("prompt_tuner"))?;
        let generator = ctx.generator(&gw, base_t.clone())?;
        let run = generator.generate_blocks(&frame, a, b, &news).map_err(fail("llm_gateway"))?;
        let strategies: Vec<_> = run.strategies.iter().map(|g| g.strategy.clone()).collect();
        let (rankings, rationales) = exemplar_evidence(&strategies, &labels);
        let features = if rankings.is_empty() {
            Vec::new()
        } else {
            select_features(&rankings).map_err(fail("prompt_tuner"))?
        };
        let instructions = distill_instructions(&rationales);
        let baseline = run_sharpe(&frame, &run, a, b);
        let mut regret_state = RegretState::new(baseline.unwrap_or(0.0), cfg.tune.t_max);
        let mut kb = KnowledgeBase::new();
        let mut backtest = |t: &PromptTemplate| -> Result<f64, String> {
            let g = ctx.generator(&gw, t.clone()).map_err(|e| e.to_string())?;
            prompt_backtest(&g, &frame, a, b, &news).map_err(|e| e.to_string())
        };
        let inputs = TuneInputs {
            base: &base_t,
            features: &features,
            instructions: &instructions,
            params: CompletionParams::TUNING,
        };
        let outcome = tuner::tune(&writer, &judge, &mut backtest, &mut regret_state, &mut kb, &inputs)
            .map_err(fail("prompt_tuner"))?;
        let mut kb_bytes = Vec::new();
        kb.write_ndjson(&mut kb_bytes).map_err(fail("prompt_tuner"))?;
        dir.write(&format!("kb_{}.ndjson", k + 1), &kb_bytes)?;
        base = outcome.best_prompt.clone();
        dir.write("best_prompt.txt", base.as_bytes())?;
        state.repeats.push(RepeatSummary {
            repeat: k + 1,
            window: window_dates[k],
            baseline_sr: baseline,
            v_star: regret_state.v_star,
            features,
            instructions,
            iteration_srs: kb.entries().iter().map(|e| e.sr).collect(),
            regret_trace: outcome.regret_trace,
            stop: outcome.stop,
            best_sr: outcome.best_sr,
        });
        dir.write_json("state.json", &state)?;
        if cfg.tune.pause && k + 1 < windows.len() {
            paused = true;
            break;
        }
    }
    dir.write_json("tune.json", &state)?;
    dir.write_json("usage.json", &gw.ledger())?;
    let mut transcripts = Vec::new();
    write_transcripts(&gw.transcripts(), &mut transcripts).map_err(fail("llm_gateway"))?;
    dir.write("transcripts.jsonl", &transcripts)?;
    let out = ctx.finish(dir, "tune", vec![cfg.seed])?;
    let done = state.repeats.len();
    if paused {
        return Ok(format!(
            "paused after repeat {done} of {}; edit {} and rerun `tune` to continue",
            windows.len(),
            best_path.display()
        ));
    }
    let last = state.repeats.last().and_then(|r| r.best_sr);
    Ok(format!(
        "tuned {} over {done} repeats (last best SR {}) into {}",
        cfg.prompt_version,
        last.map_or("n/a".into(), |v| format!("{v:.3}")),
        out.display()
    ))
}

fn episode_rows(frame: &FeatureFrame, cfg: EpisodeConfig) -> Result<(usize, usize), CliError> {
    let env = TradingEnv::new(frame, cfg).map_err(fail("trading_env"))?;
    let d = env.episode_dates();
    let first = frame.position(d[0]).expect("episode dates come from the frame");
    let last = frame.position(*d.last().expect("episode is non-empty")).expect("episode dates come from the frame");
    Ok((first, last))
}

pub fn generate(ctx: &Context) -> Result<String, CliError> {
    let frame = ctx.frame()?;
    let news = ctx.news()?;
    let gw = ctx.gateway()?;
    let (template, tuned) = ctx.strategist_template()?;
    let generator = ctx.generator(&gw, template)?;
    let mut dir = ArtifactDir::create(ctx.generate_dir())?;
    dir.input(&ctx.stage(&["features", "features.csv"]));
    if let Some(t) = tuned {
        dir.input(&t);
    }
    let mut counts = Vec::new();
    for (segment, episode) in [("train", ctx.cfg.train_episode()), ("oos", ctx.cfg.oos_episode())] {
        let (a, b) = episode_rows(&frame, episode)?;
        let run = generator.generate_blocks(&frame, a, b, &news).map_err(fail("llm_gateway"))?;
        dir.write_json(&format!("strategies_{segment}.json"), &run)?;
        let signals = run.signals();
        let bytes = csv_bytes(|b| write_signals_csv(&signals, b).map_err(|e| e.to_string()))?;
        dir.write(&format!("signals_{segment}.csv"), &bytes)?;
        counts.push(format!("{} {segment}", signals.len()));
    }
    dir.write_json("usage.json", &gw.ledger())?;
    let mut transcripts = Vec::new();
    write_transcripts(&gw.transcripts(), &mut transcripts).map_err(fail("llm_gateway"))?;
    dir.write("transcripts.jsonl", &transcripts)?;
    let out = ctx.finish(dir, "generate", vec![CompletionParams::GENERATION.seed])?;
    Ok(format!("generated {} strategies into {}", counts.join(" + "), out.display()))
}

fn clear_runs(dir: &Path) -> Result<(), CliError> {
    let Ok(entries) = std::fs::read_dir(dir) else {
        return Ok(());
    };
    for e in entries.flatten() {
        let name = e.file_name().to_string_lossy().to_string();
        let stale = (name.starts_with("run_") || name.starts_with("checkpoint_") || name.starts_with("trace_"))
            && (name.ends_with(".json") || name.ends_with(".csv"));
        if stale {
            std::fs::remove_file(e.path()).map_err(fail("cli"))?;
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct RunSummary {
    run_id: usize,
    seed: u64,
    oos_sr: f64,
    oos_mdd: f64,
}

pub fn train(ctx: &Context) -> Result<String, CliError> {
    let cfg = &ctx.cfg;
    let frame = ctx.frame()?;
    // Build once up front so config and schedule errors surface before any training.
    let pair = ctx.env_pair(&frame)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(fail("ddqn_agent"))?;
    let results = pool
        .install(|| agent::train(|_| Ok(pair.clone()), &cfg.agent))
        .map_err(fail("ddqn_agent"))?;
    let tdir = ctx.train_dir(&cfg.condition);
    clear_runs(&tdir)?;
    let mut dir = ArtifactDir::create(tdir)?;
    dir.input(&ctx.stage(&["features", "features.csv"]));
    if cfg.tau != SignalMode::Off {
        dir.input(&ctx.generate_dir().join("signals_train.csv"));
        dir.input(&ctx.generate_dir().join("signals_oos.csv"));
    }
    let mut summary = Vec::new();
    for (record, checkpoint) in &results {
        dir.write_json(&format!("run_{:03}.json", record.run_id), record)?;
        dir.write_json(&format!("checkpoint_{:03}.json", record.run_id), checkpoint)?;
        summary.push(RunSummary {
            run_id: record.run_id,
            seed: record.seed,
            oos_sr: record.oos_sr,
            oos_mdd: record.oos_mdd,
        });
    }
    dir.write_json("summary.json", &summary)?;
    let seeds = summary.iter().map(|s| s.seed).collect();
    let mean_sr = summary.iter().map(|s| s.oos_sr).sum::<f64>() / summary.len() as f64;
    let out = ctx.finish(dir, "train", seeds)?;
    Ok(format!(
        "trained {} runs ({}), mean OOS SR {mean_sr:.3}, into {}",
        summary.len(),
        cfg.condition,
        out.display()
    ))
}

fn sorted_files(dir: &Path, prefix: &str, suffix: &str) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .into_iter()
        .flatten()
        .flatten()
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with(prefix) && n.ends_with(suffix))
        })
        .collect();
    files.sort();
    files
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, module: &'static str) -> Result<T, CliError> {
    let f = File::open(path).map_err(|e| CliError::Pipeline {
        module,
        message: format!("cannot open {}: {e}", path.display()),
    })?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| CliError::Pipeline {
        module,
        message: format!("{}: {e}", path.display()),
    })
}

fn checkpoints(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let tdir = ctx.train_dir(&ctx.cfg.condition);
    let files = sorted_files(&tdir, "checkpoint_", ".json");
    if files.is_empty() {
        return Err(missing("checkpoints", &tdir, "train"));
    }
    Ok(files)
}

#[derive(Debug, Serialize)]
struct BacktestRow {
    run_id: usize,
    sr: f64,
    mdd: f64,
    cumulative_return: f64,
}

pub fn backtest(ctx: &Context) -> Result<String, CliError> {
    let frame = ctx.frame()?;
    let pair = ctx.env_pair(&frame)?;
    let mut dir = ArtifactDir::create(ctx.stage(&["backtest", &ctx.cfg.condition]))?;
    clear_runs(dir.path())?;
    let mut rows = Vec::new();
    for (i, path) in checkpoints(ctx)?.iter().enumerate() {
        dir.input(path);
        let ck: Checkpoint = read_json(path, "ddqn_agent")?;
        let agent = ck.restore(&ctx.cfg.agent).map_err(fail("ddqn_agent"))?;
        let mut env = pair.test.clone();
        let ep = evaluate_greedy(&agent, &mut env).map_err(fail("ddqn_agent"))?;
        let bytes = csv_bytes(|b| write_trace_csv(env.trace(), b).map_err(|e| e.to_string()))?;
        dir.write(&format!("trace_{i:03}.csv"), &bytes)?;
        rows.push(BacktestRow {
            run_id: i,
            sr: ep.sr,
            mdd: ep.mdd,
            cumulative_return: eval::cumulative_return(&eval::equity_returns(&ep.equity_curve)),
        });
    }
    dir.write_json("backtest.json", &rows)?;
    let out = ctx.finish(dir, "backtest", vec![])?;
    Ok(format!("replayed {} checkpoints into {}", rows.len(), out.display()))
}

fn load_condition(dir: &Path) -> Result<Vec<RunMetrics>, CliError> {
    sorted_files(dir, "run_", ".json")
        .iter()
        .map(|p| {
            let r: RunRecord = read_json(p, "evaluator")?;
            Ok(RunMetrics {
                sr: r.oos_sr,
                mdd: r.oos_mdd,
            })
        })
        .collect()
}

fn subdirs(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .into_iter()
        .flatten()
        .flatten()
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().to_string())
        .collect();
    names.sort();
    names
}

fn instrument_runs(
    train_root: &Path,
    wanted: &[String],
) -> Result<BTreeMap<String, Vec<RunMetrics>>, CliError> {
    let names = if wanted.is_empty() { subdirs(train_root) } else { wanted.to_vec() };
    let mut out = BTreeMap::new();
    for name in names {
        let runs = load_condition(&train_root.join(&name))?;
        if runs.is_empty() {
            return Err(missing(&format!("runs for condition {name}"), &train_root.join(&name), "train"));
        }
        out.insert(name, runs);
    }
    Ok(out)
}

pub fn evaluate(ctx: &Context) -> Result<String, CliError> {
    let train_root = ctx.stage(&["train"]);
    let conds = instrument_runs(&train_root, &ctx.cfg.conditions)?;
    if conds.is_empty() {
        return Err(missing("trained conditions", &train_root, "train"));
    }
    let mut runs = BTreeMap::new();
    runs.insert(ctx.cfg.instrument.clone(), conds);
    let report = eval::report(&runs, ctx.cfg.pairing).map_err(fail("evaluator"))?;
    let mut dir = ArtifactDir::create(ctx.stage(&["evaluate"]))?;
    dir.input(&train_root);
    dir.write_json("metrics.json", &report)?;
    let text = report.to_text();
    dir.write("metrics.txt", text.as_bytes())?;
    ctx.finish(dir, "evaluate", vec![])?;
    Ok(text)
}

pub fn report(ctx: &Context) -> Result<String, CliError> {
    let root = ctx.root();
    let mut runs = BTreeMap::new();
    let mut usage = UsageLedger::new();
    let mut dir = ArtifactDir::create(root.join("report"))?;
    for ticker in subdirs(&root) {
        let train_root = root.join(&ticker).join("train");
        if train_root.is_dir() {
            let conds = instrument_runs(&train_root, &ctx.cfg.conditions)?;
            if !conds.is_empty() {
                dir.input(&train_root);
                runs.insert(ticker.clone(), conds);
            }
        }
        for stage in ["tune", "generate"] {
            for version in subdirs(&root.join(&ticker).join(stage)) {
                let p = root.join(&ticker).join(stage).join(&version).join("usage.json");
                if p.exists() {
                    let ledger: UsageLedger = read_json(&p, "llm_gateway")?;
                    usage.merge(&ledger);
                }
            }
        }
    }
    if runs.is_empty() {
        return Err(missing("trained runs", &root, "train"));
    }
    let report = eval::report(&runs, ctx.cfg.pairing).map_err(fail("evaluator"))?;
    dir.write_json("report.json", &report)?;
    let mut text = report.to_text();
    if !usage.is_empty() {
        text.push_str(&format!("\nTotal tokens: {}\n", usage.grand_total().total_tokens()));
    }
    dir.write("report.txt", text.as_bytes())?;
    dir.write_json("usage.json", &usage)?;
    ctx.finish(dir, "report", vec![])?;
    Ok(text)
}

#[derive(Debug, Serialize)]
struct PlotRow {
    date: NaiveDate,
    close: f64,
    #[serde(rename = "20MA")]
    ma20: Option<f64>,
    #[serde(rename = "50MA")]
    ma50: Option<f64>,
    action: String,
    tau: f64,
    strength: f64,
}

pub fn plotdata(ctx: &Context) -> Result<String, CliError> {
    let frame = ctx.frame()?;
    let pair = ctx.env_pair(&frame)?;
    let run = ctx.cfg.plot_run;
    let path = ctx.train_dir(&ctx.cfg.condition).join(format!("checkpoint_{run:03}.json"));
    if !path.exists() {
        return Err(missing(&format!("checkpoint for run {run}"), &path, "train"));
    }
    let ck: Checkpoint = read_json(&path, "ddqn_agent")?;
    let agent = ck.restore(&ctx.cfg.agent).map_err(fail("ddqn_agent"))?;
    let mut env = pair.test;
    evaluate_greedy(&agent, &mut env).map_err(fail("ddqn_agent"))?;
    let strength = env.strength_schedule();
    let mut w = csv::Writer::from_writer(Vec::new());
    for (i, row) in env.trace().iter().enumerate() {
        let r = frame.position(row.date).expect("trace dates come from the frame");
        w.serialize(PlotRow {
            date: row.date,
            close: row.price,
            ma20: frame.value("20MA", r),
            ma50: frame.value("50MA", r),
            action: guidedrl::Direction::from_index(row.action as usize)
                .expect("trace actions are 0 or 1")
                .to_string(),
            tau: row.tau,
            strength: strength[i],
        })
        .map_err(fail("cli"))?;
    }
    let bytes = w.into_inner().map_err(fail("cli"))?;
    let mut dir = ArtifactDir::create(ctx.stage(&["plotdata", &ctx.cfg.condition]))?;
    dir.input(&path);
    dir.write(&format!("run_{run:03}.csv"), &bytes)?;
    let out = ctx.finish(dir, "plotdata", vec![ck_seed(&ctx.cfg, run)])?;
    Ok(format!("{} rows into {}", env.trace().len(), out.display()))
}

fn ck_seed(cfg: &RunConfig, run: usize) -> u64 {
    cfg.agent.base_seed.wrapping_add(run as u64)
}
