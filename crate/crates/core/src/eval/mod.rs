//! Risk and return metrics, significance tests and comparison reports.
//!
//! Conventions: the risk-free rate defaults to zero and cumulative return is
//! the arithmetic sum of per-step returns, not the compounded product.

mod report;
mod stats;

pub use report::{report, ConditionStats, InstrumentReport, MetricsReport, Pairing, PairTest, ReportError, RunMetrics};
pub use stats::{
    ln_gamma, one_sample_t_test, paired_t_test, regularized_incomplete_beta, student_t_cdf, two_sided_p,
    welch_t_test, TestKind, TestResult,
};

use crate::features::TRADING_DAYS;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("degenerate series: {0}")]
    Degenerate(String),
    #[error("argument error: {0}")]
    Argument(String),
}

/// Per-period Sharpe ratio `mean(R - rf) / std(R)` with the sample standard
/// deviation. Zero variance is an error, never an infinite ratio.
pub fn sharpe(returns: &[f64], risk_free: f64) -> Result<f64, EvalError> {
    if returns.len() < 2 {
        return Err(EvalError::Degenerate(format!("{} returns; need at least 2", returns.len())));
    }
    if let Some(r) = returns.iter().find(|r| !r.is_finite()) {
        return Err(EvalError::Argument(format!("non-finite return {r}")));
    }
    if returns.iter().all(|r| *r == returns[0]) {
        return Err(EvalError::Degenerate("zero return variance".into()));
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return Err(EvalError::Degenerate("zero return variance".into()));
    }
    Ok((mean - risk_free) / var.sqrt())
}

/// Scales a daily Sharpe ratio to 252 trading days.
pub fn annualize_sharpe(daily_sr: f64) -> f64 {
    daily_sr * TRADING_DAYS.sqrt()
}

/// Annualized Sharpe ratio of a daily return series at zero risk-free rate.
pub fn annualized_sharpe(returns: &[f64]) -> Result<f64, EvalError> {
    sharpe(returns, 0.0).map(annualize_sharpe)
}

/// Largest fractional fall from a running peak to a later trough.
pub fn max_drawdown(equity: &[f64]) -> Result<f64, EvalError> {
    if equity.is_empty() {
        return Err(EvalError::Argument("empty equity curve".into()));
    }
    if let Some(v) = equity.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(EvalError::Argument(format!("non-positive equity value {v}")));
    }
    let mut peak = equity[0];
    let mut mdd: f64 = 0.0;
    for &v in equity {
        peak = peak.max(v);
        mdd = mdd.max((peak - v) / peak);
    }
    Ok(mdd)
}

/// Plain sum of returns.
pub fn cumulative_return(returns: &[f64]) -> f64 {
    returns.iter().sum()
}

/// Simple returns between consecutive equity values.
pub fn equity_returns(equity: &[f64]) -> Vec<f64> {
    equity.windows(2).map(|w| w[1] / w[0] - 1.0).collect()
}
