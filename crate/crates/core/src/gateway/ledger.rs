use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Usage;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageTotals {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl UsageTotals {
    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }

    fn add(&mut self, other: &UsageTotals) {
        self.calls += other.calls;
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
    }
}

/// Serialized form of one ledger key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub instrument: String,
    pub prompt_version: String,
    #[serde(flatten)]
    pub totals: UsageTotals,
}

/// Cumulative token counts per `(instrument, prompt version)`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<LedgerRow>", into = "Vec<LedgerRow>")]
pub struct UsageLedger {
    entries: BTreeMap<(String, String), UsageTotals>,
}

impl From<Vec<LedgerRow>> for UsageLedger {
    fn from(rows: Vec<LedgerRow>) -> Self {
        let mut ledger = UsageLedger::default();
        for r in rows {
            ledger
                .entries
                .entry((r.instrument, r.prompt_version))
                .or_default()
                .add(&r.totals);
        }
        ledger
    }
}

impl From<UsageLedger> for Vec<LedgerRow> {
    fn from(l: UsageLedger) -> Self {
        l.entries
            .into_iter()
            .map(|((instrument, prompt_version), totals)| LedgerRow {
                instrument,
                prompt_version,
                totals,
            })
            .collect()
    }
}

impl UsageLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, instrument: &str, prompt_version: &str, usage: &Usage) {
        let e = self
            .entries
            .entry((instrument.to_string(), prompt_version.to_string()))
            .or_default();
        e.calls += 1;
        e.prompt_tokens += usage.prompt_tokens;
        e.completion_tokens += usage.completion_tokens;
    }

    pub fn totals(&self, instrument: &str, prompt_version: &str) -> UsageTotals {
        self.entries
            .get(&(instrument.to_string(), prompt_version.to_string()))
            .copied()
            .unwrap_or_default()
    }

    pub fn grand_total(&self) -> UsageTotals {
        let mut t = UsageTotals::default();
        for v in self.entries.values() {
            t.add(v);
        }
        t
    }

    pub fn merge(&mut self, other: &UsageLedger) {
        for (k, v) in &other.entries {
            self.entries.entry(k.clone()).or_default().add(v);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, &UsageTotals)> {
        self.entries.iter().map(|((i, p), t)| (i.as_str(), p.as_str(), t))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn additive_and_round_trip() {
        let mut l = UsageLedger::new();
        assert_eq!(l.totals("AAPL", "P4").total_tokens(), 0);
        let u = Usage {
            prompt_tokens: 100,
            completion_tokens: 50,
        };
        l.record("AAPL", "P4", &u);
        l.record("AAPL", "P4", &u);
        l.record("MSFT", "P1", &u);
        let t = l.totals("AAPL", "P4");
        assert_eq!((t.total_tokens(), t.calls), (300, 2));
        let json = serde_json::to_string(&l).unwrap();
        let back: UsageLedger = serde_json::from_str(&json).unwrap();
        assert_eq!(back, l);
        assert_eq!(back.grand_total().total_tokens(), 450);
    }
}
