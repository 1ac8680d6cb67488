use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::stats::{paired_t_test, welch_t_test};
use super::EvalError;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("report error: {0}")]
    Invalid(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// The two per-run numbers a report aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub sr: f64,
    pub mdd: f64,
}

/// Paired tests need equal run counts per condition; Welch does not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    #[default]
    Paired,
    Welch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionStats {
    pub sr_mean: f64,
    pub sr_std: f64,
    pub mdd_mean: f64,
    pub mdd_std: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTest {
    pub pair: [String; 2],
    pub t: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentReport {
    pub ticker: String,
    pub conditions: BTreeMap<String, ConditionStats>,
    pub tests: Vec<PairTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub instruments: Vec<InstrumentReport>,
    /// Mean over instruments of each condition's mean SR and MDD.
    pub condition_means: BTreeMap<String, RunMetrics>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.iter().all(|x| *x == xs[0]) {
        return (xs[0], 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Aggregates runs per `ticker -> condition` and tests every condition pair
/// on SR. A single condition produces no tests.
pub fn report(
    runs: &BTreeMap<String, BTreeMap<String, Vec<RunMetrics>>>,
    pairing: Pairing,
) -> Result<MetricsReport, ReportError> {
    if runs.is_empty() {
        return Err(ReportError::Invalid("no instruments".into()));
    }
    let mut instruments = Vec::new();
    let mut sums: BTreeMap<String, (f64, f64, usize)> = BTreeMap::new();
    for (ticker, conds) in runs {
        let mut conditions = BTreeMap::new();
        for (name, recs) in conds {
            if recs.is_empty() {
                return Err(ReportError::Invalid(format!("{ticker}/{name}: no runs")));
            }
            let srs: Vec<f64> = recs.iter().map(|r| r.sr).collect();
            let mdds: Vec<f64> = recs.iter().map(|r| r.mdd).collect();
            let (sr_mean, sr_std) = mean_std(&srs);
            let (mdd_mean, mdd_std) = mean_std(&mdds);
            let e = sums.entry(name.clone()).or_insert((0.0, 0.0, 0));
            e.0 += sr_mean;
            e.1 += mdd_mean;
            e.2 += 1;
            conditions.insert(
                name.clone(),
                ConditionStats {
                    sr_mean,
                    sr_std,
                    mdd_mean,
                    mdd_std,
                    runs: recs.len(),
                },
            );
        }
        let names: Vec<&String> = conds.keys().collect();
        let mut tests = Vec::new();
        for i in 0..names.len() {
            for j in i + 1..names.len() {
                let a: Vec<f64> = conds[names[i]].iter().map(|r| r.sr).collect();
                let b: Vec<f64> = conds[names[j]].iter().map(|r| r.sr).collect();
                let result = match pairing {
                    Pairing::Paired => {
                        if a.len() != b.len() {
                            return Err(ReportError::Invalid(format!(
                                "{ticker}: paired test needs equal run counts ({} has {}, {} has {})",
                                names[i],
                                a.len(),
                                names[j],
                                b.len()
                            )));
                        }
                        paired_t_test(&a, &b)?
                    }
                    Pairing::Welch => welch_t_test(&a, &b)?,
                };
                tests.push(PairTest {
                    pair: [names[i].clone(), names[j].clone()],
                    t: result.t,
                    p: result.p,
                });
            }
        }
        instruments.push(InstrumentReport {
            ticker: ticker.clone(),
            conditions,
            tests,
        });
    }
    let condition_means = sums
        .into_iter()
        .map(|(k, (sr, mdd, n))| {
            (
                k,
                RunMetrics {
                    sr: sr / n as f64,
                    mdd: mdd / n as f64,
                },
            )
        })
        .collect();
    Ok(MetricsReport {
        instruments,
        condition_means,
    })
}

impl MetricsReport {
    fn condition_names(&self) -> Vec<String> {
        self.condition_means.keys().cloned().collect()
    }

    /// Aligned text tables: SR, MDD, then the pairwise tests.
    pub fn to_text(&self) -> String {
        let names = self.condition_names();
        let mut out = String::new();
        for (title, pick) in [
            ("Sharpe Ratio", (|c: &ConditionStats| (c.sr_mean, c.sr_std)) as fn(&ConditionStats) -> (f64, f64)),
            ("Maximum Drawdown", |c: &ConditionStats| (c.mdd_mean, c.mdd_std)),
        ] {
            let _ = writeln!(out, "{title}");
            let _ = write!(out, "{:<10}", "Ticker");
            for n in &names {
                let _ = write!(out, " {:>18}", n);
            }
            out.push('\n');
            for inst in &self.instruments {
                let _ = write!(out, "{:<10}", inst.ticker);
                for n in &names {
                    let cell = inst
                        .conditions
                        .get(n)
                        .map(|c| {
                            let (m, s) = pick(c);
                            format!("{m:.2} ({s:.2})")
                        })
                        .unwrap_or_else(|| "-".into());
                    let _ = write!(out, " {:>18}", cell);
                }
                out.push('\n');
            }
            let _ = write!(out, "{:<10}", "Mean");
            for n in &names {
                let m = &self.condition_means[n];
                let v = if title.starts_with("Sharpe") { m.sr } else { m.mdd };
                let _ = write!(out, " {:>18}", format!("{v:.2}"));
            }
            out.push_str("\n\n");
        }
        if self.instruments.iter().any(|i| !i.tests.is_empty()) {
            let _ = writeln!(out, "Paired comparisons (SR)");
            let _ = writeln!(out, "{:<10} {:<30} {:>10} {:>12}", "Ticker", "Pair", "t", "p");
            for inst in &self.instruments {
                for t in &inst.tests {
                    let _ = writeln!(
                        out,
                        "{:<10} {:<30} {:>10.3} {:>12.3e}",
                        inst.ticker,
                        format!("{} vs {}", t.pair[0], t.pair[1]),
                        t.t,
                        t.p
                    );
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn runs(pairs: &[(f64, f64)]) -> Vec<RunMetrics> {
        pairs.iter().map(|&(sr, mdd)| RunMetrics { sr, mdd }).collect()
    }

    #[test]
    fn identical_runs_have_zero_sigma() {
        let mut m = BTreeMap::new();
        m.insert("AAPL".to_string(), BTreeMap::from([("rl".to_string(), runs(&[(1.1, 0.3); 25]))]));
        let r = report(&m, Pairing::Paired).unwrap();
        let c = &r.instruments[0].conditions["rl"];
        assert_eq!((c.sr_std, c.mdd_std), (0.0, 0.0));
        assert!(r.instruments[0].tests.is_empty());
        assert!(!r.to_text().contains("Paired comparisons"));
    }

    #[test]
    fn hand_built_means() {
        let mut m = BTreeMap::new();
        m.insert(
            "X".to_string(),
            BTreeMap::from([
                ("a".to_string(), runs(&[(1.0, 0.2), (2.0, 0.4), (3.0, 0.6)])),
                ("b".to_string(), runs(&[(0.0, 0.1), (1.0, 0.1), (5.0, 0.4)])),
            ]),
        );
        let r = report(&m, Pairing::Paired).unwrap();
        let a = &r.instruments[0].conditions["a"];
        assert!((a.sr_mean - 2.0).abs() < 1e-15);
        assert!((a.sr_std - 1.0).abs() < 1e-15);
        assert!((a.mdd_mean - 0.4).abs() < 1e-15);
        assert!((a.mdd_std - 0.2).abs() < 1e-15);
        let b = &r.instruments[0].conditions["b"];
        assert!((b.sr_mean - 2.0).abs() < 1e-15);
        // sqrt(((0-2)^2 + (1-2)^2 + (5-2)^2) / 2) = sqrt(7)
        assert!((b.sr_std - 7f64.sqrt()).abs() < 1e-15);
        assert_eq!(r.instruments[0].tests.len(), 1);
        assert!(r.to_text().contains("a vs b"));
    }

    #[test]
    fn mismatched_counts_fail_paired_only() {
        let mut m = BTreeMap::new();
        m.insert(
            "X".to_string(),
            BTreeMap::from([
                ("a".to_string(), runs(&[(1.0, 0.2), (2.0, 0.4), (3.0, 0.6)])),
                ("b".to_string(), runs(&[(0.0, 0.1), (1.0, 0.1)])),
            ]),
        );
        assert!(report(&m, Pairing::Paired).is_err());
        assert!(report(&m, Pairing::Welch).is_ok());
    }
}
