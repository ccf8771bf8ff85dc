//! Chat-completion backends: an OpenAI-compatible HTTP client, an offline
//! mock keyed by prompt hash, and a deterministic echo rewriter.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::cache::{prompt_key, ResponseCache};
use super::prompt::{DIALOG_MARKER, QUESTION_MARKER};
use crate::error::{Error, Result};

/// A chat-completion backend: prompt text in, completion text out.
pub trait ChatClient: Sync {
    fn model_id(&self) -> &str;
    fn complete(&self, prompt: &str) -> Result<String>;
}

/// Env var holding the chat-completions base URL.
pub const LLM_URL_ENV: &str = "APCIR_LLM_URL";
/// Env var holding the optional bearer token.
pub const LLM_KEY_ENV: &str = "APCIR_LLM_KEY";

/// Blocking client for an OpenAI-compatible `/chat/completions` endpoint.
/// Requests run at temperature 0 so retries are as deterministic as the
/// backend allows.
pub struct HttpChatClient {
    endpoint: String,
    api_key: Option<String>,
    model: String,
    http: reqwest::blocking::Client,
}

impl HttpChatClient {
    pub fn new(base_url: &str, api_key: Option<String>, model: impl Into<String>) -> Result<Self> {
        let trimmed = base_url.trim_end_matches('/');
        let endpoint = if trimmed.ends_with("/chat/completions") {
            trimmed.to_string()
        } else {
            format!("{trimmed}/chat/completions")
        };
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| Error::Backend(format!("http client init failed: {e}")))?;
        Ok(HttpChatClient {
            endpoint,
            api_key,
            model: model.into(),
            http,
        })
    }

    /// Reads the base URL from `APCIR_LLM_URL` and the key from
    /// `APCIR_LLM_KEY`.
    pub fn from_env(model: impl Into<String>) -> Result<Self> {
        let url = std::env::var(LLM_URL_ENV)
            .map_err(|_| Error::Backend(format!("{LLM_URL_ENV} is not set")))?;
        let key = std::env::var(LLM_KEY_ENV).ok();
        HttpChatClient::new(&url, key, model)
    }
}

impl ChatClient for HttpChatClient {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn complete(&self, prompt: &str) -> Result<String> {
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        });
        let mut request = self.http.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request
            .send()
            .map_err(|e| Error::Backend(format!("request failed: {e}")))?;
        let status = response.status();
        if !status.is_success() {
            let text = response.text().unwrap_or_default();
            return Err(Error::Backend(format!(
                "chat endpoint returned {status}: {text}"
            )));
        }
        let payload: serde_json::Value = response
            .json()
            .map_err(|e| Error::Backend(format!("bad response body: {e}")))?;
        payload["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| Error::Backend("response has no choices[0].message.content".into()))
    }
}

/// Canned responses keyed by [`prompt_key`] hash, serialized as
/// `{"model": ..., "responses": {hash: text}}`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MockFixtures {
    pub model: String,
    pub responses: BTreeMap<String, String>,
}

impl MockFixtures {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(crate::session::json_error)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("fixtures serialize");
        crate::util::atomic_write(path, text.as_bytes())
    }
}

/// Offline backend serving canned responses. Unknown prompts are an error
/// unless echo mode is enabled, in which case they fall back to
/// [`echo_response`].
pub struct MockClient {
    fixtures: MockFixtures,
    echo_default: bool,
}

impl MockClient {
    pub fn new(fixtures: MockFixtures, echo_default: bool) -> Self {
        MockClient {
            fixtures,
            echo_default,
        }
    }
}

impl ChatClient for MockClient {
    fn model_id(&self) -> &str {
        &self.fixtures.model
    }

    fn complete(&self, prompt: &str) -> Result<String> {
        let key = prompt_key(&self.fixtures.model, prompt);
        if let Some(text) = self.fixtures.responses.get(&key) {
            return Ok(text.clone());
        }
        if self.echo_default {
            return Ok(echo_response(prompt));
        }
        Err(Error::Backend(format!(
            "no canned response for prompt hash {key}"
        )))
    }
}

/// Deterministic backend that rewrites by concatenating the history
/// utterances with the last question, always at level `a` and never touching
/// the profile.
pub struct EchoClient;

impl ChatClient for EchoClient {
    fn model_id(&self) -> &str {
        "echo"
    }

    fn complete(&self, prompt: &str) -> Result<String> {
        Ok(echo_response(prompt))
    }
}

/// Builds the echo completion from a rendered prompt by reading the dialog
/// and last-question sections.
pub fn echo_response(prompt: &str) -> String {
    let dialog = section_after(prompt, DIALOG_MARKER);
    let mut parts: Vec<&str> = Vec::new();
    for line in dialog.lines() {
        if let Some(utterance) = line.strip_prefix("User: ") {
            parts.push(utterance.trim());
        }
    }
    let question = section_after(prompt, QUESTION_MARKER).trim().to_string();
    if !question.is_empty() {
        parts.push(&question);
    }
    let rewrite = if parts.is_empty() {
        "empty".to_string()
    } else {
        parts.join(" ")
    };
    let reply = json!({
        "level": "a",
        "reasoning": "echo backend: concatenated history utterances",
        "rewrite": rewrite,
        "personalized_rewrite": rewrite,
        "response": "",
    });
    format!("```json\n{reply}\n```")
}

/// Text between the last occurrence of `marker` and the next section marker
/// (a line starting with `**` or `#`), or the end of the prompt.
fn section_after<'a>(prompt: &'a str, marker: &str) -> &'a str {
    let Some(start) = prompt.rfind(marker) else {
        return "";
    };
    let rest = &prompt[start + marker.len()..];
    let end = rest
        .lines()
        .scan(0usize, |offset, line| {
            let this = *offset;
            *offset += line.len() + 1;
            Some((this, line))
        })
        .find(|(off, line)| *off > 0 && (line.starts_with("**") || line.starts_with('#')))
        .map(|(off, _)| off)
        .unwrap_or(rest.len());
    &rest[..end]
}

/// Decorator adding a persistent response cache to any backend: one upstream
/// call per cache miss, zero for hits.
pub struct CachedClient<C: ChatClient> {
    inner: C,
    cache: ResponseCache,
}

impl<C: ChatClient> CachedClient<C> {
    pub fn new(inner: C, cache: ResponseCache) -> Self {
        CachedClient { inner, cache }
    }
}

impl<C: ChatClient> ChatClient for CachedClient<C> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn complete(&self, prompt: &str) -> Result<String> {
        let key = prompt_key(self.model_id(), prompt);
        if let Some(hit) = self.cache.get(&key)? {
            return Ok(hit);
        }
        let response = self.inner.complete(prompt)?;
        self.cache.put(&key, self.model_id(), &response)?;
        Ok(response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mock_returns_canned_response() {
        let mut fixtures = MockFixtures {
            model: "mock".into(),
            responses: BTreeMap::new(),
        };
        fixtures
            .responses
            .insert(prompt_key("mock", "the prompt"), "canned".into());
        let client = MockClient::new(fixtures, false);
        assert_eq!(client.complete("the prompt").unwrap(), "canned");
        assert!(client.complete("unknown").is_err());
    }

    #[test]
    fn mock_echo_mode_rewrites_from_history() {
        let client = MockClient::new(
            MockFixtures {
                model: "mock".into(),
                responses: BTreeMap::new(),
            },
            true,
        );
        let prompt = format!(
            "# Task Description\nstuff\n\n{DIALOG_MARKER}\nUser: first question\nSystem: an answer\nUser: second question\n\n{QUESTION_MARKER}\nthird question\n"
        );
        let raw = client.complete(&prompt).unwrap();
        assert!(raw.contains("first question second question third question"), "{raw}");
        assert!(!raw.contains("an answer\" "));
    }

    #[test]
    fn echo_ignores_demonstration_user_lines() {
        // "User:" lines before the dialog marker (e.g. in demonstrations)
        // must not leak into the rewrite.
        let prompt = format!(
            "# Rewriting Demonstrations\nUser: demo question\n\n{DIALOG_MARKER}\nUser: real question\n\n{QUESTION_MARKER}\nlast\n"
        );
        let raw = echo_response(&prompt);
        assert!(raw.contains("real question last"), "{raw}");
        assert!(!raw.contains("demo question"), "{raw}");
    }

    #[test]
    fn cached_client_calls_upstream_once() {
        use std::sync::atomic::{AtomicUsize, Ordering};

        struct Counting(AtomicUsize);
        impl ChatClient for Counting {
            fn model_id(&self) -> &str {
                "counting"
            }
            fn complete(&self, _prompt: &str) -> Result<String> {
                self.0.fetch_add(1, Ordering::SeqCst);
                Ok("reply".into())
            }
        }

        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path()).unwrap();
        let client = CachedClient::new(Counting(AtomicUsize::new(0)), cache);
        for _ in 0..5 {
            assert_eq!(client.complete("same prompt").unwrap(), "reply");
        }
        assert_eq!(client.inner.0.load(Ordering::SeqCst), 1);
    }
}
