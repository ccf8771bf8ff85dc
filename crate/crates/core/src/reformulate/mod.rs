//! Per-turn personalization-level identification and query reformulation.
//!
//! One chat-completion call per turn yields the level plus all query
//! variants; every turn then contributes exactly three retrieval texts:
//! the rewrite alone, the rewrite with its pseudo response, and the
//! personalized (or, at level `a`, alternative) rewrite with its response.

mod cache;
mod client;
mod prompt;

pub use cache::{prompt_key, ResponseCache};
pub use client::{
    echo_response, CachedClient, ChatClient, EchoClient, HttpChatClient, MockClient,
    MockFixtures, LLM_KEY_ENV, LLM_URL_ENV,
};
pub use prompt::{PromptTemplate, DIALOG_MARKER, PROFILE_MARKER, QUESTION_MARKER};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::session::ConversationSession;

/// How much a turn should lean on the user profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PersonalizationLevel {
    /// Level `a`: the query is self-contained; no profile information.
    #[serde(rename = "a")]
    NonPersonalized,
    /// Level `b`: the profile is an optional extra that sharpens results.
    #[serde(rename = "b")]
    Partial,
    /// Level `c`: the profile carries indispensable constraints.
    #[serde(rename = "c")]
    Full,
}

impl PersonalizationLevel {
    pub const ALL: [PersonalizationLevel; 3] = [
        PersonalizationLevel::NonPersonalized,
        PersonalizationLevel::Partial,
        PersonalizationLevel::Full,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PersonalizationLevel::NonPersonalized => "a",
            PersonalizationLevel::Partial => "b",
            PersonalizationLevel::Full => "c",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        match text.trim().to_ascii_lowercase().as_str() {
            "a" => Some(PersonalizationLevel::NonPersonalized),
            "b" => Some(PersonalizationLevel::Partial),
            "c" => Some(PersonalizationLevel::Full),
            _ => None,
        }
    }
}

impl std::fmt::Display for PersonalizationLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Token budget for rewrites in retrieval texts.
pub const MAX_REWRITE_TOKENS: usize = 64;
/// Token budget for pseudo responses in retrieval texts.
pub const MAX_RESPONSE_TOKENS: usize = 256;

/// Retries with the identical prompt after a malformed completion before
/// degrading to the verbatim-utterance fallback.
pub const REFORMULATE_RETRIES: usize = 2;

/// The per-turn reformulation result.
///
/// `q_prime`/`r_prime` are the non-personalized rewrite and pseudo response.
/// When the level is `b` or `c`, `q_user`/`r_user` hold the personalized
/// pair; at level `a` they hold the alternative non-personalized variant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReformulationBundle {
    pub topic_id: String,
    pub level: PersonalizationLevel,
    pub q_prime: String,
    pub r_prime: String,
    pub q_user: String,
    pub r_user: String,
    /// The model's chain-of-thought text, retained for audit.
    pub raw_reasoning: String,
    /// True when the model output stayed malformed through all retries and
    /// the bundle fell back to the verbatim utterance at level `a`.
    #[serde(default)]
    pub degraded: bool,
}

impl ReformulationBundle {
    /// The three retrieval texts, with the rewrite truncated to
    /// [`MAX_REWRITE_TOKENS`] and responses to [`MAX_RESPONSE_TOKENS`]
    /// at concatenation time.
    pub fn retrieval_texts(&self) -> [String; 3] {
        let q = truncate_tokens(&self.q_prime, MAX_REWRITE_TOKENS);
        let qr = concat_texts(
            &truncate_tokens(&self.q_prime, MAX_REWRITE_TOKENS),
            &truncate_tokens(&self.r_prime, MAX_RESPONSE_TOKENS),
        );
        let personalized = concat_texts(
            &truncate_tokens(&self.q_user, MAX_REWRITE_TOKENS),
            &truncate_tokens(&self.r_user, MAX_RESPONSE_TOKENS),
        );
        [q, qr, personalized]
    }
}

/// Names for the three retrieval-text variants, used for run files and tags.
pub const VARIANT_NAMES: [&str; 3] = ["qprime", "qprime_r", "personalized"];

/// Keeps the first `max` whitespace tokens, joined by single spaces.
/// Whitespace is normalized even when nothing is dropped.
pub fn truncate_tokens(text: &str, max: usize) -> String {
    text.split_whitespace()
        .take(max)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Joins a rewrite and a pseudo response with a single space; an empty
/// response leaves the rewrite untouched.
pub fn concat_texts(query: &str, response: &str) -> String {
    if response.is_empty() {
        query.to_string()
    } else if query.is_empty() {
        response.to_string()
    } else {
        format!("{query} {response}")
    }
}

#[derive(Deserialize)]
struct ModelReply {
    level: String,
    #[serde(default)]
    reasoning: Option<String>,
    rewrite: String,
    #[serde(default)]
    personalized_rewrite: Option<String>,
    #[serde(default)]
    response: Option<String>,
    #[serde(default)]
    personalized_response: Option<String>,
}

/// Pulls the JSON object out of a completion: a ```json fenced block, any
/// fenced block, or the outermost braces. Returns None when no parsable,
/// valid reply is found.
fn parse_model_reply(raw: &str) -> Option<ModelReply> {
    let candidate = fenced_block(raw, "```json")
        .or_else(|| fenced_block(raw, "```"))
        .or_else(|| brace_span(raw))?;
    let reply: ModelReply = serde_json::from_str(candidate).ok()?;
    if reply.rewrite.trim().is_empty() {
        return None;
    }
    PersonalizationLevel::parse(&reply.level)?;
    Some(reply)
}

fn fenced_block<'a>(raw: &'a str, opener: &str) -> Option<&'a str> {
    let start = raw.find(opener)? + opener.len();
    let rest = &raw[start..];
    let end = rest.find("```")?;
    Some(rest[..end].trim())
}

fn brace_span(raw: &str) -> Option<&str> {
    let start = raw.find('{')?;
    let end = raw.rfind('}')?;
    (end > start).then(|| &raw[start..=end])
}

/// Renders the prompt for one turn, obtains a completion, and parses it into
/// a bundle.
///
/// Malformed output is retried with the identical prompt up to
/// [`REFORMULATE_RETRIES`] times; if it stays malformed the bundle degrades
/// to level `a` with the verbatim utterance as every variant. Transport
/// errors from the client propagate.
pub fn identify_and_reformulate(
    client: &dyn ChatClient,
    template: &PromptTemplate,
    session: &ConversationSession,
    turn_index: usize,
) -> Result<ReformulationBundle> {
    let prompt = template.render(session, turn_index)?;
    let topic_id = session.topic_id(turn_index)?;
    let mut last_raw = String::new();
    for _ in 0..=REFORMULATE_RETRIES {
        let raw = client.complete(&prompt)?;
        if let Some(reply) = parse_model_reply(&raw) {
            let level = PersonalizationLevel::parse(&reply.level).expect("validated");
            let r_prime = reply.response.unwrap_or_default();
            let q_user = reply
                .personalized_rewrite
                .filter(|q| !q.trim().is_empty())
                .unwrap_or_else(|| reply.rewrite.clone());
            let r_user = reply
                .personalized_response
                .unwrap_or_else(|| r_prime.clone());
            return Ok(ReformulationBundle {
                topic_id,
                level,
                q_prime: reply.rewrite,
                r_prime,
                q_user,
                r_user,
                raw_reasoning: reply.reasoning.unwrap_or_default(),
                degraded: false,
            });
        }
        last_raw = raw;
    }
    let utterance = session.turns[turn_index].utterance.clone();
    Ok(ReformulationBundle {
        topic_id,
        level: PersonalizationLevel::NonPersonalized,
        q_prime: utterance.clone(),
        r_prime: String::new(),
        q_user: utterance,
        r_user: String::new(),
        raw_reasoning: last_raw,
        degraded: true,
    })
}

#[derive(Serialize, Deserialize)]
struct BundleFile {
    bundles: Vec<ReformulationBundle>,
}

/// Serializes bundles as the `bundles.json` document.
pub fn write_bundles(bundles: &[ReformulationBundle]) -> String {
    let file = BundleFile {
        bundles: bundles.to_vec(),
    };
    serde_json::to_string_pretty(&file).expect("bundles serialize")
}

/// Parses a `bundles.json` document.
pub fn parse_bundles(text: &str) -> Result<Vec<ReformulationBundle>> {
    let file: BundleFile = serde_json::from_str(text).map_err(crate::session::json_error)?;
    for bundle in &file.bundles {
        if bundle.q_prime.is_empty() || bundle.q_user.is_empty() {
            return Err(Error::Schema(format!(
                "bundle {} has an empty query variant",
                bundle.topic_id
            )));
        }
    }
    Ok(file.bundles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::Turn;
    use std::collections::BTreeMap;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn session() -> ConversationSession {
        ConversationSession {
            session_id: "s1".into(),
            user_profile: vec!["I am allergic to peanuts.".into(), "I live in Lyon.".into()],
            turns: vec![
                Turn {
                    turn_id: 1,
                    utterance: "tell me about rust traits".into(),
                    response: Some("traits define shared behavior".into()),
                    gold_level: None,
                },
                Turn {
                    turn_id: 2,
                    utterance: "how do they differ from interfaces".into(),
                    response: None,
                    gold_level: None,
                },
            ],
        }
    }

    fn canned(level: &str) -> String {
        format!(
            "```json\n{{\"level\": \"{level}\", \"reasoning\": \"because\", \"rewrite\": \"rust traits vs interfaces\", \"personalized_rewrite\": \"rust traits vs interfaces for me\", \"response\": \"they differ in dispatch\"}}\n```"
        )
    }

    fn fixtures_for(session: &ConversationSession, turn: usize, reply: &str) -> MockFixtures {
        let prompt = PromptTemplate::default().render(session, turn).unwrap();
        let mut responses = BTreeMap::new();
        responses.insert(prompt_key("mock", &prompt), reply.to_string());
        MockFixtures {
            model: "mock".into(),
            responses,
        }
    }

    #[test]
    fn canned_reply_roundtrips_into_bundle() {
        let session = session();
        let fixtures = fixtures_for(&session, 1, &canned("c"));
        let client = MockClient::new(fixtures, false);
        let bundle =
            identify_and_reformulate(&client, &PromptTemplate::default(), &session, 1).unwrap();
        assert_eq!(bundle.topic_id, "s1_2");
        assert_eq!(bundle.level, PersonalizationLevel::Full);
        assert_eq!(bundle.q_prime, "rust traits vs interfaces");
        assert_eq!(bundle.r_prime, "they differ in dispatch");
        assert_eq!(bundle.q_user, "rust traits vs interfaces for me");
        // No personalized_response in the reply: falls back to the response.
        assert_eq!(bundle.r_user, "they differ in dispatch");
        assert!(!bundle.degraded);
    }

    #[test]
    fn missing_level_degrades_to_level_a() {
        let session = session();
        let reply = "```json\n{\"rewrite\": \"no level here\"}\n```";
        let client = MockClient::new(fixtures_for(&session, 0, reply), false);
        let bundle =
            identify_and_reformulate(&client, &PromptTemplate::default(), &session, 0).unwrap();
        assert!(bundle.degraded);
        assert_eq!(bundle.level, PersonalizationLevel::NonPersonalized);
        assert_eq!(bundle.q_prime, "tell me about rust traits");
        assert_eq!(bundle.q_user, "tell me about rust traits");
        assert_eq!(bundle.r_prime, "");
    }

    #[test]
    fn malformed_output_retried_then_degraded() {
        struct Garbage(AtomicUsize);
        impl ChatClient for Garbage {
            fn model_id(&self) -> &str {
                "garbage"
            }
            fn complete(&self, _prompt: &str) -> Result<String> {
                self.0.fetch_add(1, Ordering::SeqCst);
                Ok("not json at all".into())
            }
        }
        let client = Garbage(AtomicUsize::new(0));
        let session = session();
        let bundle =
            identify_and_reformulate(&client, &PromptTemplate::default(), &session, 0).unwrap();
        assert!(bundle.degraded);
        assert_eq!(client.0.load(Ordering::SeqCst), 1 + REFORMULATE_RETRIES);
    }

    #[test]
    fn cache_hit_needs_zero_upstream_calls() {
        struct Offline;
        impl ChatClient for Offline {
            fn model_id(&self) -> &str {
                "mock"
            }
            fn complete(&self, _prompt: &str) -> Result<String> {
                Err(Error::Backend("offline".into()))
            }
        }
        let session = session();
        let template = PromptTemplate::default();
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path()).unwrap();

        // Warm the cache with a working client.
        let warm = CachedClient::new(
            MockClient::new(fixtures_for(&session, 0, &canned("b")), false),
            cache.clone(),
        );
        let first = identify_and_reformulate(&warm, &template, &session, 0).unwrap();

        // Replaying offline serves the same bundle from cache alone.
        let offline = CachedClient::new(Offline, cache);
        let second = identify_and_reformulate(&offline, &template, &session, 0).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn every_bundle_yields_exactly_three_texts() {
        let bundle = ReformulationBundle {
            topic_id: "t".into(),
            level: PersonalizationLevel::Partial,
            q_prime: "alpha".into(),
            r_prime: "beta".into(),
            q_user: "gamma".into(),
            r_user: "delta".into(),
            raw_reasoning: String::new(),
            degraded: false,
        };
        let texts = bundle.retrieval_texts();
        assert_eq!(texts.len(), 3);
        assert_eq!(texts[0], "alpha");
        assert_eq!(texts[1], "alpha beta");
        assert_eq!(texts[2], "gamma delta");
    }

    #[test]
    fn truncation_applies_at_concatenation() {
        let long_q: String = (0..100).map(|i| format!("q{i} ")).collect();
        let long_r: String = (0..300).map(|i| format!("r{i} ")).collect();
        let bundle = ReformulationBundle {
            topic_id: "t".into(),
            level: PersonalizationLevel::Full,
            q_prime: long_q.clone(),
            r_prime: long_r.clone(),
            q_user: long_q,
            r_user: long_r,
            raw_reasoning: String::new(),
            degraded: false,
        };
        let texts = bundle.retrieval_texts();
        assert_eq!(texts[0].split_whitespace().count(), MAX_REWRITE_TOKENS);
        assert_eq!(
            texts[1].split_whitespace().count(),
            MAX_REWRITE_TOKENS + MAX_RESPONSE_TOKENS
        );
        assert!(texts[1].starts_with("q0 q1"));
        assert!(texts[1].contains("r0 r1"));
        assert!(!texts[1].contains(&format!("r{MAX_RESPONSE_TOKENS}")));
    }

    #[test]
    fn echo_level_a_never_contains_profile_sentences() {
        let session = session();
        let template = PromptTemplate::default();
        let client = EchoClient;
        for turn in 0..session.turns.len() {
            let bundle = identify_and_reformulate(&client, &template, &session, turn).unwrap();
            assert_eq!(bundle.level, PersonalizationLevel::NonPersonalized);
            for sentence in &session.user_profile {
                assert!(
                    !bundle.q_user.contains(sentence),
                    "profile `{sentence}` leaked into q_user `{}`",
                    bundle.q_user
                );
            }
        }
    }

    #[test]
    fn bundles_json_roundtrip() {
        let bundle = ReformulationBundle {
            topic_id: "s1_1".into(),
            level: PersonalizationLevel::NonPersonalized,
            q_prime: "q".into(),
            r_prime: String::new(),
            q_user: "q2".into(),
            r_user: String::new(),
            raw_reasoning: "why".into(),
            degraded: false,
        };
        let text = write_bundles(&[bundle.clone()]);
        assert!(text.contains("\"level\": \"a\""));
        let parsed = parse_bundles(&text).unwrap();
        assert_eq!(parsed, vec![bundle]);
    }

    #[test]
    fn bare_brace_reply_parses_too() {
        let raw = "Sure! {\"level\":\"b\",\"rewrite\":\"ok\",\"response\":\"text\"} done";
        let reply = parse_model_reply(raw).unwrap();
        assert_eq!(reply.level, "b");
        assert_eq!(reply.rewrite, "ok");
    }
}
