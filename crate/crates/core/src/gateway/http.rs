//! OpenAI-compatible chat-completions client with retries.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{CompletionBackend, CompletionParams, CompletionResult, GatewayError, Usage};
use crate::signal::{TokenDistribution, TOP_K};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

/// One POST of a JSON body. Network failures map to
/// [`GatewayError::Transport`], which the backend retries.
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, headers: &[(String, String)], body: &str) -> Result<HttpResponse, GatewayError>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        UreqTransport { agent }
    }
}

impl Transport for UreqTransport {
    fn post_json(&self, url: &str, headers: &[(String, String)], body: &str) -> Result<HttpResponse, GatewayError> {
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        for (k, v) in headers {
            req = req.header(k.as_str(), v.as_str());
        }
        let mut resp = req
            .send(body)
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub timeout_secs: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o-mini".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            max_retries: 5,
            base_delay_ms: 500,
            timeout_secs: 120,
        }
    }
}

pub struct HttpBackend {
    cfg: HttpConfig,
    api_key: String,
    transport: Box<dyn Transport>,
}

impl HttpBackend {
    /// Reads the credential from `cfg.api_key_env`.
    pub fn from_env(cfg: HttpConfig) -> Result<Self, GatewayError> {
        let key = std::env::var(&cfg.api_key_env)
            .map_err(|_| GatewayError::Auth(format!("environment variable {} is not set", cfg.api_key_env)))?;
        let transport = UreqTransport::new(Duration::from_secs(cfg.timeout_secs));
        Ok(Self::with_transport(cfg, key, transport))
    }

    pub fn with_transport(cfg: HttpConfig, api_key: impl Into<String>, transport: impl Transport + 'static) -> Self {
        HttpBackend {
            cfg,
            api_key: api_key.into(),
            transport: Box::new(transport),
        }
    }

    fn request_body(&self, prompt: &str, params: &CompletionParams) -> String {
        json!({
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "seed": params.seed,
            "frequency_penalty": params.frequency_penalty,
            "presence_penalty": params.presence_penalty,
            "max_tokens": params.max_tokens,
            "logprobs": true,
            "top_logprobs": TOP_K,
        })
        .to_string()
    }
}

fn is_transient(status: u16) -> bool {
    status == 429 || status == 408 || (500..600).contains(&status)
}

/// Extracts text, per-token distributions and usage from a chat response.
pub(crate) fn parse_chat_response(body: &str) -> Result<CompletionResult, GatewayError> {
    let malformed = |message: &str| GatewayError::Malformed {
        message: message.to_string(),
        body: body.to_string(),
    };
    let v: Value = serde_json::from_str(body).map_err(|e| malformed(&format!("invalid JSON: {e}")))?;
    let choice = v
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| malformed("no choices"))?;
    let text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| malformed("no message content"))?
        .to_string();
    let mut tokens = Vec::new();
    if let Some(items) = choice.pointer("/logprobs/content").and_then(Value::as_array) {
        for item in items {
            let token = item.get("token").and_then(Value::as_str).map(str::to_string);
            let logprob = item
                .get("logprob")
                .and_then(Value::as_f64)
                .ok_or_else(|| malformed("token without logprob"))?;
            let mut top: Vec<f64> = item
                .get("top_logprobs")
                .and_then(Value::as_array)
                .map(|alts| alts.iter().filter_map(|a| a.get("logprob").and_then(Value::as_f64)).map(f64::exp).collect())
                .unwrap_or_default();
            if top.is_empty() {
                top.push(logprob.exp());
            }
            top.sort_by(|a, b| b.total_cmp(a));
            top.truncate(TOP_K);
            let sum: f64 = top.iter().sum();
            if sum > 1.0 {
                // provider rounding
                top.iter_mut().for_each(|p| *p /= sum);
            }
            let tail = (1.0 - top.iter().sum::<f64>()).max(0.0);
            let dist = TokenDistribution {
                token,
                logprob: logprob.min(0.0),
                top,
                tail,
            };
            dist.validate().map_err(|e| malformed(&e.to_string()))?;
            tokens.push(dist);
        }
    }
    let count = |name: &str| v.pointer(&format!("/usage/{name}")).and_then(Value::as_u64).unwrap_or(0);
    Ok(CompletionResult {
        text,
        tokens,
        usage: Usage {
            prompt_tokens: count("prompt_tokens"),
            completion_tokens: count("completion_tokens"),
        },
    })
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<CompletionResult, GatewayError> {
        let body = self.request_body(prompt, params);
        let headers = vec![("Authorization".to_string(), format!("Bearer {}", self.api_key))];
        let mut attempt = 0u32;
        loop {
            let outcome = self.transport.post_json(&self.cfg.endpoint, &headers, &body);
            let retry_err = match outcome {
                Ok(r) if (200..300).contains(&r.status) => return parse_chat_response(&r.body),
                Ok(r) if r.status == 401 || r.status == 403 => return Err(GatewayError::Auth(r.body)),
                Ok(r) if is_transient(r.status) => {
                    if r.status == 429 {
                        GatewayError::RateLimited { attempts: attempt + 1 }
                    } else {
                        GatewayError::Http {
                            status: r.status,
                            body: r.body,
                        }
                    }
                }
                Ok(r) => {
                    return Err(GatewayError::Http {
                        status: r.status,
                        body: r.body,
                    })
                }
                Err(e @ GatewayError::Transport(_)) => e,
                Err(e) => return Err(e),
            };
            if attempt >= self.cfg.max_retries {
                return Err(retry_err);
            }
            let delay = self.cfg.base_delay_ms.saturating_mul(1u64 << attempt.min(16));
            log::warn!("transient provider failure ({retry_err}); retry {} in {delay} ms", attempt + 1);
            std::thread::sleep(Duration::from_millis(delay));
            attempt += 1;
        }
    }

    fn name(&self) -> &str {
        "http"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    struct Scripted(Mutex<Vec<HttpResponse>>, Mutex<u32>);

    impl Transport for Scripted {
        fn post_json(&self, _: &str, headers: &[(String, String)], body: &str) -> Result<HttpResponse, GatewayError> {
            assert!(headers.iter().any(|(k, v)| k == "Authorization" && v == "Bearer k"));
            let req: Value = serde_json::from_str(body).unwrap();
            assert_eq!(req["top_logprobs"], 5);
            *self.1.lock().unwrap() += 1;
            Ok(self.0.lock().unwrap().remove(0))
        }
    }

    fn ok_body() -> String {
        json!({
            "choices": [{"message": {"content": "hi"}, "logprobs": {"content": [
                {"token": "hi", "logprob": -0.1, "top_logprobs": [
                    {"token": "hi", "logprob": -0.1}, {"token": "hey", "logprob": -2.5}]}
            ]}}],
            "usage": {"prompt_tokens": 12, "completion_tokens": 1}
        })
        .to_string()
    }

    fn backend(responses: Vec<HttpResponse>) -> HttpBackend {
        let cfg = HttpConfig {
            base_delay_ms: 0,
            max_retries: 3,
            ..HttpConfig::default()
        };
        HttpBackend::with_transport(cfg, "k", Scripted(Mutex::new(responses), Mutex::new(0)))
    }

    fn resp(status: u16, body: &str) -> HttpResponse {
        HttpResponse {
            status,
            body: body.to_string(),
        }
    }

    #[test]
    fn retries_then_succeeds() {
        let b = backend(vec![resp(429, "slow"), resp(429, "slow"), resp(200, &ok_body())]);
        let r = b.complete("p", &CompletionParams::GENERATION).unwrap();
        assert_eq!(r.text, "hi");
        assert_eq!(r.usage.prompt_tokens, 12);
        assert_eq!(r.tokens.len(), 1);
        assert!((r.tokens[0].top[0] - (-0.1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn error_taxonomy() {
        let b = backend(vec![resp(200, "<html>oops</html>")]);
        match b.complete("p", &CompletionParams::GENERATION) {
            Err(GatewayError::Malformed { body, .. }) => assert_eq!(body, "<html>oops</html>"),
            other => panic!("{other:?}"),
        }
        let b = backend(vec![resp(401, "bad key")]);
        assert!(matches!(b.complete("p", &CompletionParams::GENERATION), Err(GatewayError::Auth(_))));
        let b = backend(vec![resp(429, ""); 4]);
        assert!(matches!(
            b.complete("p", &CompletionParams::GENERATION),
            Err(GatewayError::RateLimited { attempts: 4 })
        ));
        let b = backend(vec![resp(400, "bad request")]);
        assert!(matches!(b.complete("p", &CompletionParams::GENERATION), Err(GatewayError::Http { status: 400, .. })));
    }
}
