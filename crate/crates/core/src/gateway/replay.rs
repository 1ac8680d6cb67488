//! JSONL transcripts of completed calls, and a backend that answers from them.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CompletionBackend, CompletionParams, CompletionResult, GatewayError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub prompt_sha256: String,
    pub seed: u64,
    pub instrument: String,
    pub prompt_version: String,
    pub result: CompletionResult,
}

pub fn prompt_digest(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

pub fn write_transcripts<W: Write>(transcripts: &[Transcript], mut w: W) -> Result<(), GatewayError> {
    for t in transcripts {
        let line = serde_json::to_string(t).map_err(|e| GatewayError::Replay(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| GatewayError::Replay(e.to_string()))?;
    }
    Ok(())
}

pub fn read_transcripts<R: BufRead>(r: R) -> Result<Vec<Transcript>, GatewayError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| GatewayError::Replay(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| GatewayError::Replay(format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

/// Answers each `(prompt, seed)` with its recorded result. Repeated keys are
/// served in recording order and the last one sticks.
#[derive(Debug, Default)]
pub struct ReplayBackend {
    entries: HashMap<(String, u64), Vec<CompletionResult>>,
    cursor: std::sync::Mutex<HashMap<(String, u64), usize>>,
}

impl ReplayBackend {
    pub fn new(transcripts: Vec<Transcript>) -> Self {
        let mut entries: HashMap<(String, u64), Vec<CompletionResult>> = HashMap::new();
        for t in transcripts {
            entries.entry((t.prompt_sha256, t.seed)).or_default().push(t.result);
        }
        ReplayBackend {
            entries,
            cursor: Default::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl CompletionBackend for ReplayBackend {
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<CompletionResult, GatewayError> {
        let key = (prompt_digest(prompt), params.seed);
        let results = self
            .entries
            .get(&key)
            .ok_or_else(|| GatewayError::Replay(format!("no transcript for prompt {} seed {}", key.0, key.1)))?;
        let mut cursor = self.cursor.lock().expect("replay lock");
        let i = cursor.entry(key).or_insert(0);
        let r = results[(*i).min(results.len() - 1)].clone();
        *i += 1;
        Ok(r)
    }

    fn name(&self) -> &str {
        "replay"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Gateway, GatewayConfig, StubBackend, UsageKey};

    #[test]
    fn replay_reproduces_recorded_run() {
        let gw = Gateway::new(StubBackend::new(), GatewayConfig::default()).unwrap();
        let key = UsageKey::new("T", "P4");
        let live = gw.complete(&key, "Close: \"3\"", &CompletionParams::GENERATION).unwrap();
        let mut buf = Vec::new();
        write_transcripts(&gw.transcripts(), &mut buf).unwrap();
        let replay = ReplayBackend::new(read_transcripts(buf.as_slice()).unwrap());
        assert_eq!(replay.complete("Close: \"3\"", &CompletionParams::GENERATION).unwrap(), live);
        assert!(matches!(
            replay.complete("other", &CompletionParams::GENERATION),
            Err(GatewayError::Replay(_))
        ));
    }
}
