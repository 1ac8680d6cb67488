use chrono::{Duration, NaiveDate};
use proptest::prelude::*;

use guidedrl::env::{read_trace_csv, write_trace_csv, EnvError, EpisodeConfig, ObsFeatures, TradingEnv};
use guidedrl::labeler::{label_dated, label_series, read_labels_csv, write_labels_csv, LONG_HORIZON};
use guidedrl::signal::{SignalFeature, SignalMode};
use guidedrl::{Direction, FeatureFrame};

fn frame(closes: &[f64]) -> FeatureFrame {
    let d0 = NaiveDate::from_ymd_opt(2019, 1, 1).unwrap();
    let dates = (0..closes.len() as i64).map(|i| d0 + Duration::days(i)).collect();
    let mut f = FeatureFrame::new(dates).unwrap();
    f.insert_dense("Close", closes).unwrap();
    f
}

fn walk(steps: Vec<f64>) -> Vec<f64> {
    let mut c = vec![20.0];
    for s in steps {
        let last = *c.last().unwrap();
        c.push(last * (1.0 + s));
    }
    c
}

fn close_only(window: usize) -> EpisodeConfig {
    EpisodeConfig {
        window,
        features: ObsFeatures::Close,
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ledger_identity_and_leverage(
        steps in prop::collection::vec(-0.08f64..0.08, 30..200),
        actions in prop::collection::vec(any::<bool>(), 200),
        cost in 0.0f64..0.01,
        cap in 0.5f64..2.0,
    ) {
        let closes = walk(steps);
        let cfg = EpisodeConfig { cost_rate: cost, leverage_cap: cap, ..close_only(4) };
        let mut env = TradingEnv::new(&frame(&closes), cfg).unwrap();
        let mut i = 0;
        while !env.is_done() {
            let a = if actions[i % actions.len()] { Direction::Long } else { Direction::Short };
            let o = env.step(a).unwrap();
            let s = &o.info;
            let ledger = s.equity_before + s.shares as f64 * (s.next_price - s.price) - s.cost;
            prop_assert!((s.equity - ledger).abs() <= 1e-9 * s.equity_before.abs().max(1.0));
            if !s.forced_cover && s.shares != s.shares_before {
                prop_assert!((s.shares.unsigned_abs() as f64) * s.price <= cap * s.equity_before + 1e-9);
            }
            prop_assert!(s.shares == 0 || s.shares.signum() as f64 == a.sign());
            prop_assert_eq!(o.observation.len(), env.observation_dim());
            i += 1;
        }
    }

    #[test]
    fn labels_ignore_price_scale(steps in prop::collection::vec(-0.05f64..0.05, 25..120), k in 0i32..6) {
        let closes = walk(steps);
        let scale = 2f64.powi(k);
        let scaled: Vec<f64> = closes.iter().map(|c| c * scale).collect();
        let a = label_series(&closes).unwrap();
        let b = label_series(&scaled).unwrap();
        prop_assert_eq!(a.len(), closes.len() - LONG_HORIZON);
        prop_assert_eq!(a, b);
    }
}

#[test]
fn observation_layout() {
    let closes = walk(vec![0.01; 40]);
    let f = frame(&closes);
    let sigs = vec![SignalFeature::new(f.index()[4], Direction::Short, 3, 0.0).unwrap()];
    let mut env = TradingEnv::new(&f, close_only(5)).unwrap();
    env.attach_signals(&sigs, SignalMode::Tau).unwrap();
    let obs = env.reset();
    assert_eq!(obs.len(), 7);
    assert_eq!(obs.values()[0], 0.0);
    assert!((obs.values()[4] - (1.01f64.powi(4) - 1.0)).abs() < 1e-12);
    assert_eq!(obs.position(), 0.0);
    assert_eq!(obs.tau(), -1.0);
    let next = env.step(Direction::Long).unwrap().observation;
    assert_eq!(next.position(), 1.0);
}

#[test]
fn step_after_done_is_a_protocol_error() {
    let closes = walk(vec![0.01; 6]);
    let mut env = TradingEnv::new(&frame(&closes), close_only(3)).unwrap();
    while !env.is_done() {
        env.step(Direction::Long).unwrap();
    }
    assert!(matches!(env.step(Direction::Long), Err(EnvError::Protocol(_))));
    assert!(matches!(env.step_raw(2), Err(_)));
}

#[test]
fn misaligned_signals_are_rejected() {
    let closes = walk(vec![0.01; 60]);
    let f = frame(&closes);
    let mut env = TradingEnv::new(&f, close_only(5)).unwrap();
    let off_grid = vec![
        SignalFeature::new(f.index()[4], Direction::Long, 2, 0.5).unwrap(),
        SignalFeature::new(f.index()[17], Direction::Long, 2, 0.5).unwrap(),
    ];
    assert!(matches!(env.attach_signals(&off_grid, SignalMode::Tau), Err(EnvError::Schedule(_))));
    assert!(env.attach_signals(&[], SignalMode::Tau).is_err());
    env.attach_signals(&[], SignalMode::Off).unwrap();
}

#[test]
fn traces_round_trip_and_repeat() {
    let closes = walk((0..80).map(|i| 0.02 * (i as f64 * 0.9).sin()).collect());
    let f = frame(&closes);
    let play = || {
        let mut env = TradingEnv::new(&f, close_only(4)).unwrap();
        let mut k = 0;
        while !env.is_done() {
            env.step(if k % 3 == 0 { Direction::Short } else { Direction::Long }).unwrap();
            k += 1;
        }
        let mut buf = Vec::new();
        write_trace_csv(env.trace(), &mut buf).unwrap();
        (buf, env.trace().to_vec())
    };
    let (a, rows) = play();
    let (b, _) = play();
    assert_eq!(a, b);
    assert_eq!(read_trace_csv(a.as_slice()).unwrap(), rows);
}

#[test]
fn labels_round_trip_with_dates() {
    let closes = walk((0..50).map(|i| 0.01 * (i as f64).cos()).collect());
    let f = frame(&closes);
    let labels = label_dated(f.index(), &closes).unwrap();
    assert_eq!(labels[0].date, Some(f.index()[0]));
    let mut buf = Vec::new();
    write_labels_csv(&labels, &mut buf).unwrap();
    assert_eq!(read_labels_csv(buf.as_slice()).unwrap(), labels);
    assert!(label_series(&closes[..LONG_HORIZON]).is_err());
}
