use std::collections::BTreeMap;

use proptest::prelude::*;

use guidedrl::eval::{
    annualized_sharpe, cumulative_return, equity_returns, max_drawdown, paired_t_test, report, sharpe, two_sided_p,
    welch_t_test, Pairing, RunMetrics,
};

fn returns() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-0.1f64..0.1, 3..80).prop_filter("needs spread", |r| {
        r.iter().any(|x| (x - r[0]).abs() > 1e-6)
    })
}

proptest! {
    #[test]
    fn sharpe_is_scale_invariant(r in returns(), k in 0.1f64..10.0) {
        let scaled: Vec<f64> = r.iter().map(|x| x * k).collect();
        let a = sharpe(&r, 0.0).unwrap();
        let b = sharpe(&scaled, 0.0).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn risk_free_is_a_shift(r in returns(), rf in -0.01f64..0.01) {
        let shifted: Vec<f64> = r.iter().map(|x| x - rf).collect();
        let a = sharpe(&r, rf).unwrap();
        let b = sharpe(&shifted, 0.0).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn drawdown_in_unit_interval(r in returns()) {
        let mut eq = vec![100.0];
        for x in &r {
            let last = *eq.last().unwrap();
            eq.push(last * (1.0 + x));
        }
        let m = max_drawdown(&eq).unwrap();
        prop_assert!((0.0..1.0).contains(&m));
        let sorted = {
            let mut s = eq.clone();
            s.sort_by(f64::total_cmp);
            s
        };
        prop_assert_eq!(max_drawdown(&sorted).unwrap(), 0.0);
    }

    #[test]
    fn cumulative_return_is_additive(a in returns(), b in returns()) {
        let joined: Vec<f64> = a.iter().chain(&b).copied().collect();
        let lhs = cumulative_return(&joined);
        prop_assert!((lhs - cumulative_return(&a) - cumulative_return(&b)).abs() < 1e-12);
    }

    #[test]
    fn paired_test_is_antisymmetric(a in prop::collection::vec(-3.0f64..3.0, 4..30), shift in -1.0f64..1.0) {
        let b: Vec<f64> = a.iter().enumerate().map(|(i, x)| x + shift + 0.01 * (i as f64).sin()).collect();
        let ab = paired_t_test(&a, &b).unwrap();
        let ba = paired_t_test(&b, &a).unwrap();
        prop_assert!((ab.t + ba.t).abs() < 1e-9 * ab.t.abs().max(1.0));
        prop_assert!((ab.p - ba.p).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab.p));
    }

    #[test]
    fn p_value_falls_with_t(t in 0.0f64..20.0, dt in 0.01f64..5.0, df in 1.0f64..200.0) {
        let p0 = two_sided_p(t, df);
        let p1 = two_sided_p(t + dt, df);
        prop_assert!(p1 <= p0 + 1e-15);
        prop_assert!((p0 - two_sided_p(-t, df)).abs() < 1e-15);
    }
}

#[test]
fn welch_matches_scipy() {
    // scipy.stats.ttest_ind(a, b, equal_var=False)
    let a = [0.7, -1.6, -0.2, -1.2, -0.1, 3.4, 3.7, 0.8, 0.0, 2.0];
    let b = [1.9, 0.8, 1.1, 0.1, -0.1, 4.4, 5.5, 1.6, 4.6, 3.4];
    let r = welch_t_test(&a, &b).unwrap();
    assert!((r.t + 1.8608134674868526).abs() < 1e-6, "{}", r.t);
    assert!((r.p - 0.07939414018735823).abs() < 1e-6, "{}", r.p);
}

#[test]
fn annualized_sharpe_of_equity() {
    let eq = [100.0, 101.0, 100.5, 102.0, 103.0];
    let r = equity_returns(&eq);
    assert_eq!(r.len(), 4);
    let sr = annualized_sharpe(&r).unwrap();
    assert!((sr - sharpe(&r, 0.0).unwrap() * 252f64.sqrt()).abs() < 1e-12);
}

#[test]
fn report_compares_conditions_per_instrument() {
    let runs = |srs: &[f64]| -> Vec<RunMetrics> { srs.iter().map(|&sr| RunMetrics { sr, mdd: 0.2 }).collect() };
    let mut conds = BTreeMap::new();
    conds.insert("off".to_string(), runs(&[0.5, 0.6, 0.4, 0.7]));
    conds.insert("tau".to_string(), runs(&[0.9, 1.1, 0.8, 1.2]));
    let mut all = BTreeMap::new();
    all.insert("AAA".to_string(), conds);
    let rep = report(&all, Pairing::Paired).unwrap();
    let text = rep.to_text();
    assert!(text.contains("AAA") && text.contains("tau"), "{text}");
    let inst = &rep.instruments[0];
    assert_eq!(inst.tests.len(), 1);
    let want = paired_t_test(&[0.5, 0.6, 0.4, 0.7], &[0.9, 1.1, 0.8, 1.2]).unwrap();
    assert!((inst.tests[0].t.abs() - want.t.abs()).abs() < 1e-12);
    assert!((inst.tests[0].p - want.p).abs() < 1e-12);
}

#[test]
fn paired_report_rejects_unequal_run_counts() {
    let mut conds = BTreeMap::new();
    conds.insert("off".to_string(), vec![RunMetrics { sr: 0.1, mdd: 0.1 }; 3]);
    conds.insert("tau".to_string(), vec![RunMetrics { sr: 0.2, mdd: 0.1 }; 4]);
    let mut all = BTreeMap::new();
    all.insert("AAA".to_string(), conds);
    assert!(report(&all, Pairing::Paired).is_err());
    assert!(report(&all, Pairing::Welch).is_ok());
}
