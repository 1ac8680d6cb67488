//! `{placeholder}` templates for the strategist ladder and the analyst.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::GatewayError;

const P0: &str = include_str!("../../templates/strategist_p0.txt");
const P1: &str = include_str!("../../templates/strategist_p1.txt");
const P2: &str = include_str!("../../templates/strategist_p2.txt");
const P3: &str = include_str!("../../templates/strategist_p3.txt");
const P4: &str = include_str!("../../templates/strategist_p4.txt");
pub const ANALYST_TEMPLATE: &str = include_str!("../../templates/analyst.txt");

/// Text written for a value the caller marked as unavailable.
pub const NOT_AVAILABLE: &str = "N/A";

/// Strategist prompt ladder. Each version adds information to the previous one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub enum PromptVersion {
    P0,
    P1,
    P2,
    P3,
    #[default]
    P4,
}

impl PromptVersion {
    pub const ALL: [PromptVersion; 5] = [
        PromptVersion::P0,
        PromptVersion::P1,
        PromptVersion::P2,
        PromptVersion::P3,
        PromptVersion::P4,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptVersion::P0 => "P0",
            PromptVersion::P1 => "P1",
            PromptVersion::P2 => "P2",
            PromptVersion::P3 => "P3",
            PromptVersion::P4 => "P4",
        }
    }

    pub fn template_text(self) -> &'static str {
        match self {
            PromptVersion::P0 => P0,
            PromptVersion::P1 => P1,
            PromptVersion::P2 => P2,
            PromptVersion::P3 => P3,
            PromptVersion::P4 => P4,
        }
    }

    pub fn template(self) -> PromptTemplate {
        PromptTemplate::parse(self.template_text()).expect("built-in templates are valid")
    }
}

impl fmt::Display for PromptVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptVersion {
    type Err = GatewayError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "P0" => Ok(PromptVersion::P0),
            "P1" => Ok(PromptVersion::P1),
            "P2" => Ok(PromptVersion::P2),
            "P3" => Ok(PromptVersion::P3),
            "P4" => Ok(PromptVersion::P4),
            _ => Err(GatewayError::Argument(format!("unknown prompt version {s:?}; expected P0..P4"))),
        }
    }
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([A-Za-z0-9_]+)\}").expect("static regex"))
}

/// Every placeholder name a template may use.
pub fn known_placeholders() -> &'static BTreeSet<String> {
    static KNOWN: OnceLock<BTreeSet<String>> = OnceLock::new();
    KNOWN.get_or_init(|| {
        let mut set = scan(P4);
        set.extend(scan(ANALYST_TEMPLATE));
        set
    })
}

fn scan(text: &str) -> BTreeSet<String> {
    placeholder_re().captures_iter(text).map(|c| c[1].to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
    placeholders: BTreeSet<String>,
}

impl PromptTemplate {
    /// Rejects unknown placeholders and stray braces.
    pub fn parse(text: &str) -> Result<Self, GatewayError> {
        let placeholders = scan(text);
        let known = known_placeholders();
        let unknown: Vec<&String> = placeholders.iter().filter(|p| !known.contains(*p)).collect();
        if !unknown.is_empty() {
            return Err(GatewayError::Template(format!("unknown placeholder(s): {unknown:?}")));
        }
        let stripped = placeholder_re().replace_all(text, "");
        if stripped.contains('{') || stripped.contains('}') {
            return Err(GatewayError::Template("stray brace outside a placeholder".into()));
        }
        Ok(PromptTemplate {
            text: text.to_string(),
            placeholders,
        })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn placeholders(&self) -> &BTreeSet<String> {
        &self.placeholders
    }

    /// Substitutes every placeholder. Braces inside values become parentheses
    /// so that no `{...}` survives rendering.
    pub fn render(&self, ctx: &PromptContext) -> Result<String, GatewayError> {
        let missing: Vec<&String> = self.placeholders.iter().filter(|p| !ctx.values.contains_key(*p)).collect();
        if !missing.is_empty() {
            return Err(GatewayError::Template(format!(
                "no value for placeholder(s) {missing:?}; supply a value or mark them N/A"
            )));
        }
        let out = placeholder_re().replace_all(&self.text, |c: &regex::Captures| match &ctx.values[&c[1]] {
            Some(v) => sanitize(v),
            None => NOT_AVAILABLE.to_string(),
        });
        Ok(out.into_owned())
    }
}

fn sanitize(v: &str) -> String {
    v.replace('{', "(").replace('}', ")")
}

/// Placeholder values. `None` marks a value as explicitly unavailable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PromptContext {
    values: BTreeMap<String, Option<String>>,
}

impl PromptContext {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, name: impl Into<String>, value: impl Into<String>) -> &mut Self {
        self.values.insert(name.into(), Some(value.into()));
        self
    }

    pub fn set_na(&mut self, name: impl Into<String>) -> &mut Self {
        self.values.insert(name.into(), None);
        self
    }

    pub fn get(&self, name: &str) -> Option<Option<&str>> {
        self.values.get(name).map(|v| v.as_deref())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.values.contains_key(name)
    }
}

/// Analyst prompt over already anonymized articles.
pub fn render_analyst_prompt(articles: &[super::AnonymizedText]) -> Result<String, GatewayError> {
    if articles.is_empty() {
        return Err(GatewayError::Argument("analyst prompt needs at least one article".into()));
    }
    let joined = articles
        .iter()
        .enumerate()
        .map(|(i, a)| format!("{}. {}", i + 1, a.as_str().replace(['\n', '\r'], " ")))
        .collect::<Vec<_>>()
        .join("\n    ");
    let mut ctx = PromptContext::new();
    ctx.set("articles_list", joined);
    PromptTemplate::parse(ANALYST_TEMPLATE)?.render(&ctx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_context(t: &PromptTemplate) -> PromptContext {
        let mut ctx = PromptContext::new();
        for p in t.placeholders() {
            ctx.set(p.clone(), "1.0");
        }
        ctx
    }

    #[test]
    fn ladder_is_nested() {
        for w in PromptVersion::ALL.windows(2) {
            let (a, b) = (w[0].template(), w[1].template());
            assert!(a.placeholders().is_subset(b.placeholders()), "{} vs {}", w[0], w[1]);
            assert!(a.placeholders().len() < b.placeholders().len());
        }
    }

    #[test]
    fn full_render_leaves_no_braces() {
        let t = PromptVersion::P4.template();
        let mut ctx = full_context(&t);
        ctx.set("Last_LLM_Strat", "json {\"a\": 1}");
        let out = t.render(&ctx).unwrap();
        assert!(!out.contains('{') && !out.contains('}'));
    }

    #[test]
    fn na_and_missing() {
        let t = PromptVersion::P2.template();
        let mut ctx = full_context(&t);
        for p in ["Last_LLM_Strat", "Last_LLM_Strat_Action", "Last_LLM_Strat_Returns"] {
            ctx.set_na(p);
        }
        let out = t.render(&ctx).unwrap();
        assert!(out.contains("last_action: \"N/A\""));
        let mut partial = PromptContext::new();
        partial.set("Close", "1");
        assert!(matches!(t.render(&partial), Err(GatewayError::Template(_))));
    }

    #[test]
    fn unknown_placeholder_rejected() {
        assert!(matches!(PromptTemplate::parse("x {Bogus_Field}"), Err(GatewayError::Template(_))));
        assert!(matches!(PromptTemplate::parse("x { y"), Err(GatewayError::Template(_))));
        assert!(PromptTemplate::parse("Close {Close}").is_ok());
    }

    #[test]
    fn analyst_prompt() {
        let arts: Vec<_> = (0..5).map(|i| super::super::AnonymizedText::trusted(format!("article number {i}"))).collect();
        let out = render_analyst_prompt(&arts).unwrap();
        for i in 0..5 {
            assert!(out.contains(&format!("article number {i}")));
        }
        assert!(render_analyst_prompt(&[]).is_err());
    }

    #[test]
    fn version_parse() {
        assert_eq!("p3".parse::<PromptVersion>().unwrap(), PromptVersion::P3);
        assert!("P9".parse::<PromptVersion>().is_err());
        assert_eq!(PromptVersion::default(), PromptVersion::P4);
    }
}
