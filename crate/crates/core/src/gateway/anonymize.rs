//! Entity and date masking for news text, plus an audit for rendered prompts.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use chrono::{Datelike, NaiveDate};
use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};

use super::GatewayError;

/// Text that went through [`Anonymizer::anonymize`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnonymizedText(String);

impl AnonymizedText {
    /// Wraps text the caller knows to be free of entities and dates.
    pub fn trusted(text: impl Into<String>) -> Self {
        AnonymizedText(text.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

const MONTHS: &str = "Jan(?:uary)?|Feb(?:ruary)?|Mar(?:ch)?|Apr(?:il)?|May|June?|July?|Aug(?:ust)?|Sep(?:t(?:ember)?)?|Oct(?:ober)?|Nov(?:ember)?|Dec(?:ember)?";

struct DatePatterns {
    iso: Regex,
    month_day_year: Regex,
    day_month_year: Regex,
    month_year: Regex,
    slash: Regex,
}

fn patterns() -> &'static DatePatterns {
    static P: OnceLock<DatePatterns> = OnceLock::new();
    P.get_or_init(|| DatePatterns {
        iso: Regex::new(r"\b(\d{4})[-/.](\d{1,2})[-/.](\d{1,2})(?:[T ]\d{2}:\d{2}(?::\d{2}(?:\.\d+)?)?(?:Z|[+-]\d{2}:?\d{2})?)?\b").unwrap(),
        month_day_year: Regex::new(&format!(r"(?i)\b({MONTHS})\.?\s+(\d{{1,2}})(?:st|nd|rd|th)?,?\s+(\d{{4}})\b")).unwrap(),
        day_month_year: Regex::new(&format!(r"(?i)\b(\d{{1,2}})(?:st|nd|rd|th)?\s+({MONTHS})\.?,?\s+(\d{{4}})\b")).unwrap(),
        month_year: Regex::new(&format!(r"(?i)\b({MONTHS})\.?,?\s+(\d{{4}})\b")).unwrap(),
        slash: Regex::new(r"\b(\d{1,2})/(\d{1,2})/(\d{4})\b").unwrap(),
    })
}

fn month_number(name: &str) -> Option<u32> {
    let key: String = name.chars().take(3).collect::<String>().to_ascii_lowercase();
    let months = ["jan", "feb", "mar", "apr", "may", "jun", "jul", "aug", "sep", "oct", "nov", "dec"];
    months.iter().position(|m| *m == key).map(|i| i as u32 + 1)
}

/// Relative phrase for `date` seen from `reference`. Phrases contain no
/// digits, so masking is idempotent.
pub fn relative_marker(date: Option<NaiveDate>, reference: Option<NaiveDate>) -> &'static str {
    let (Some(d), Some(r)) = (date, reference) else {
        return "recently";
    };
    let months = (r.year() * 12 + r.month() as i32) - (d.year() * 12 + d.month() as i32);
    match months {
        i32::MIN..=-1 => "in the coming months",
        0 => "this month",
        1 => "last month",
        2..=3 => "last quarter",
        4..=12 => "within the past year",
        _ => "more than a year ago",
    }
}

/// Replaces every absolute date with a relative marker.
pub fn mask_dates(text: &str, reference: Option<NaiveDate>) -> String {
    let p = patterns();
    let ymd = |y: &str, m: u32, d: &str| -> Option<NaiveDate> {
        NaiveDate::from_ymd_opt(y.parse().ok()?, m, d.parse().ok()?)
    };
    let out = p.iso.replace_all(text, |c: &Captures| {
        relative_marker(c[2].parse().ok().and_then(|m| ymd(&c[1], m, &c[3])), reference).to_string()
    });
    let out = p.month_day_year.replace_all(&out, |c: &Captures| {
        relative_marker(month_number(&c[1]).and_then(|m| ymd(&c[3], m, &c[2])), reference).to_string()
    });
    let out = p.day_month_year.replace_all(&out, |c: &Captures| {
        relative_marker(month_number(&c[2]).and_then(|m| ymd(&c[3], m, &c[1])), reference).to_string()
    });
    let out = p.month_year.replace_all(&out, |c: &Captures| {
        relative_marker(month_number(&c[1]).and_then(|m| ymd(&c[2], m, "1")), reference).to_string()
    });
    // Slash dates are read month first.
    let out = p.slash.replace_all(&out, |c: &Captures| {
        relative_marker(c[1].parse().ok().and_then(|m| ymd(&c[3], m, &c[2])), reference).to_string()
    });
    out.into_owned()
}

/// Case-insensitive whole-word alias replacement, longest alias first.
#[derive(Debug, Clone)]
pub struct Anonymizer {
    pattern: Option<Regex>,
    replacements: BTreeMap<String, String>,
}

fn alias_pattern(alias: &str) -> String {
    let word = |c: Option<char>| c.is_some_and(|c| c.is_alphanumeric() || c == '_');
    let mut s = String::new();
    if word(alias.chars().next()) {
        s.push_str(r"\b");
    }
    s.push_str(&regex::escape(alias));
    if word(alias.chars().last()) {
        s.push_str(r"\b");
    }
    s
}

impl Anonymizer {
    /// `entity_map` maps each alias (e.g. "Tesla", "TSLA") to its placeholder.
    /// Placeholders may not themselves contain an alias.
    pub fn new(entity_map: &BTreeMap<String, String>) -> Result<Self, GatewayError> {
        let mut aliases: Vec<&String> = entity_map.keys().filter(|a| !a.trim().is_empty()).collect();
        aliases.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
        let pattern = if aliases.is_empty() {
            None
        } else {
            let alt = aliases.iter().map(|a| alias_pattern(a)).collect::<Vec<_>>().join("|");
            Some(
                Regex::new(&format!("(?i)(?:{alt})"))
                    .map_err(|e| GatewayError::Argument(format!("entity map: {e}")))?,
            )
        };
        let replacements: BTreeMap<String, String> =
            entity_map.iter().map(|(k, v)| (k.to_lowercase(), v.clone())).collect();
        if let Some(re) = &pattern {
            for v in replacements.values() {
                if re.is_match(v) {
                    return Err(GatewayError::Argument(format!("placeholder {v:?} contains a mapped entity")));
                }
            }
        }
        Ok(Anonymizer { pattern, replacements })
    }

    pub fn anonymize(&self, text: &str, reference: Option<NaiveDate>) -> AnonymizedText {
        let masked = match &self.pattern {
            Some(re) => re
                .replace_all(text, |c: &Captures| self.replacements[&c[0].to_lowercase()].clone())
                .into_owned(),
            None => text.to_string(),
        };
        AnonymizedText(mask_dates(&masked, reference))
    }

    /// Mapped entities and absolute dates still present in `text`.
    pub fn audit(&self, text: &str) -> Vec<String> {
        let mut found: Vec<String> = Vec::new();
        if let Some(re) = &self.pattern {
            found.extend(re.find_iter(text).map(|m| m.as_str().to_string()));
        }
        found.extend(find_dates(text));
        found
    }
}

/// Absolute dates in `text`, in any of the masked formats.
pub fn find_dates(text: &str) -> Vec<String> {
    let p = patterns();
    [&p.iso, &p.month_day_year, &p.day_month_year, &p.month_year, &p.slash]
        .iter()
        .flat_map(|re| re.find_iter(text).map(|m| m.as_str().to_string()))
        .collect()
}

/// Fails when a rendered prompt still carries a mapped entity or a date.
pub fn audit_prompt(anonymizer: &Anonymizer, prompt: &str) -> Result<(), GatewayError> {
    let found = anonymizer.audit(prompt);
    if found.is_empty() {
        Ok(())
    } else {
        Err(GatewayError::Audit(found))
    }
}
