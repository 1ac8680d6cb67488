use chrono::NaiveDate;
use proptest::prelude::*;

use guidedrl::signal::{
    normalize_entropy, perplexity, read_signals_csv, signal_strength, truncated_entropy, write_signals_csv,
    SignalFeature, SignalMode, TokenDistribution, TOP_K,
};
use guidedrl::Direction;

fn day(i: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(2021, 1, 1).unwrap() + chrono::Duration::days(i as i64)
}

fn distribution() -> impl Strategy<Value = TokenDistribution> {
    (prop::collection::vec(0.0f64..1.0, 2..=TOP_K + 1), -6.0f64..0.0).prop_map(|(w, lp)| {
        let s: f64 = w.iter().sum::<f64>().max(1e-9);
        let top: Vec<f64> = w[..w.len() - 1].iter().map(|x| x / s).collect();
        TokenDistribution::from_top(None, lp, top).unwrap()
    })
}

fn direction() -> impl Strategy<Value = Direction> {
    prop_oneof![Just(Direction::Long), Just(Direction::Short)]
}

proptest! {
    #[test]
    fn tau_bounds_and_sign(dir in direction(), likert in 1u8..=3, h in 0.0f64..=1.0) {
        let s = SignalFeature::new(day(0), dir, likert, h).unwrap();
        let lo = 0.01 / 3.0;
        prop_assert!(s.tau.abs() >= lo - 1e-15 && s.tau.abs() <= 1.0);
        prop_assert_eq!(s.tau.signum(), dir.sign());
        prop_assert_eq!(s.strength, signal_strength(likert, h).unwrap());
    }

    #[test]
    fn strength_monotone(likert in 1u8..3, h in 0.0f64..1.0, dh in 0.0f64..0.5) {
        let h2 = (h + dh).min(1.0);
        prop_assert!(signal_strength(likert, h2).unwrap() <= signal_strength(likert, h).unwrap());
        prop_assert!(signal_strength(likert + 1, h).unwrap() > signal_strength(likert, h).unwrap());
    }

    #[test]
    fn perplexity_at_least_one(lp in prop::collection::vec(-8.0f64..=0.0, 1..50)) {
        let p = perplexity(&lp).unwrap();
        prop_assert!(p >= 1.0);
        let worst = lp.iter().copied().fold(0.0, f64::min);
        prop_assert!(p <= (-worst).exp() + 1e-9);
    }

    #[test]
    fn entropy_bounded_by_uniform(ds in prop::collection::vec(distribution(), 1..10)) {
        let h = truncated_entropy(&ds).unwrap();
        prop_assert!(h >= 0.0);
        prop_assert!(h <= ((TOP_K + 1) as f64).ln() + 1e-12);
        let n = normalize_entropy(h).unwrap();
        prop_assert!((0.0..=1.0).contains(&n));
    }

    #[test]
    fn mode_values(dir in direction(), likert in 1u8..=3, h in 0.0f64..=1.0) {
        let s = SignalFeature::new(day(0), dir, likert, h).unwrap();
        prop_assert_eq!(s.value(SignalMode::Off), 0.0);
        prop_assert_eq!(s.value(SignalMode::DirOnly), dir.sign());
        prop_assert_eq!(s.value(SignalMode::Tau), s.tau);
        prop_assert!(s.value(SignalMode::ConfDir).abs() <= 1.0);
    }

    #[test]
    fn csv_round_trip(specs in prop::collection::vec((direction(), 1u8..=3, 0.0f64..=1.0), 1..12)) {
        let sigs: Vec<SignalFeature> = specs
            .iter()
            .enumerate()
            .map(|(i, (d, l, h))| SignalFeature::new(day(20 * i as u32), *d, *l, *h).unwrap())
            .collect();
        let mut buf = Vec::new();
        write_signals_csv(&sigs, &mut buf).unwrap();
        let back = read_signals_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back, sigs);
    }
}

#[test]
fn uniform_buckets_have_log_six_entropy() {
    let d = TokenDistribution::from_top(None, -(6f64).ln(), vec![1.0 / 6.0; 5]).unwrap();
    let h = truncated_entropy(&[d]).unwrap();
    assert!((h - 6f64.ln()).abs() < 1e-12);
    assert!((normalize_entropy(h).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn invalid_inputs_are_rejected() {
    assert!(SignalFeature::new(day(0), Direction::Long, 0, 0.5).is_err());
    assert!(SignalFeature::new(day(0), Direction::Long, 4, 0.5).is_err());
    assert!(SignalFeature::new(day(0), Direction::Long, 2, 1.5).is_err());
    assert!(perplexity(&[]).is_err());
    assert!(perplexity(&[0.1]).is_err());
    assert!(TokenDistribution::from_top(None, -0.1, vec![0.7, 0.6]).is_err());
}
