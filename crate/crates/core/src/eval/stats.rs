//! Student-t tests with a self-contained t distribution.
//!
//! The t CDF goes through the regularized incomplete beta function,
//! evaluated with the Lentz continued fraction, which converges to better
//! than 1e-10 for the degrees of freedom used here.

use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    Paired,
    OneSample,
    Welch,
}

/// Outcome of a two-sided t-test. A zero-variance sample yields `t = 0,
/// p = 1` when the mean difference is zero and `t = +-inf, p = 0` otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub kind: TestKind,
    pub t: f64,
    pub p: f64,
    pub n: usize,
    pub df: f64,
    pub mean_diff: f64,
}

/// Lanczos approximation (g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// `I_x(a, b)` for `a, b > 0` and `x` in `[0, 1]`.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(x, a, b) / a
    } else {
        1.0 - front * beta_continued_fraction(1.0 - x, b, a) / b
    }
}

fn beta_continued_fraction(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Two-sided tail probability `P(|T| >= |t|)` for `df` degrees of freedom.
pub fn two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    regularized_incomplete_beta(x, df / 2.0, 0.5).clamp(0.0, 1.0)
}

pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    let tail = 0.5 * two_sided_p(t, df);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

fn degenerate(kind: TestKind, n: usize, df: f64, mean_diff: f64) -> TestResult {
    let (t, p) = if mean_diff == 0.0 {
        (0.0, 1.0)
    } else {
        (mean_diff.signum() * f64::INFINITY, 0.0)
    };
    TestResult {
        kind,
        t,
        p,
        n,
        df,
        mean_diff,
    }
}

fn check_sample(xs: &[f64], what: &str) -> Result<(), EvalError> {
    if xs.len() < 2 {
        return Err(EvalError::Argument(format!("{what} needs at least 2 observations")));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(EvalError::Argument(format!("{what} contains a non-finite value")));
    }
    Ok(())
}

/// Two-sided paired t-test on `a - b` with `n - 1` degrees of freedom.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TestResult, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::Argument(format!(
            "paired samples differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    check_sample(&d, "paired t-test")?;
    Ok(location_test(&d, 0.0, TestKind::Paired))
}

/// Two-sided one-sample t-test of `mean(sample) = mu0`.
pub fn one_sample_t_test(sample: &[f64], mu0: f64) -> Result<TestResult, EvalError> {
    check_sample(sample, "one-sample t-test")?;
    Ok(location_test(sample, mu0, TestKind::OneSample))
}

fn location_test(xs: &[f64], mu0: f64, kind: TestKind) -> TestResult {
    let n = xs.len();
    let df = (n - 1) as f64;
    if xs.iter().all(|x| *x == xs[0]) {
        return degenerate(kind, n, df, xs[0] - mu0);
    }
    let (mean, var) = mean_var(xs);
    let mean_diff = mean - mu0;
    let t = mean_diff / (var / n as f64).sqrt();
    TestResult {
        kind,
        t,
        p: two_sided_p(t, df),
        n,
        df,
        mean_diff,
    }
}

/// Two-sided Welch t-test for samples of possibly different sizes. `n` is
/// the combined sample size.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TestResult, EvalError> {
    check_sample(a, "welch t-test")?;
    check_sample(b, "welch t-test")?;
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let n = a.len() + b.len();
    let se2 = va / na + vb / nb;
    if se2 == 0.0 {
        return Ok(degenerate(TestKind::Welch, n, na + nb - 2.0, ma - mb));
    }
    let df = se2 * se2 / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    let t = (ma - mb) / se2.sqrt();
    Ok(TestResult {
        kind: TestKind::Welch,
        t,
        p: two_sided_p(t, df),
        n,
        df,
        mean_diff: ma - mb,
    })
}
