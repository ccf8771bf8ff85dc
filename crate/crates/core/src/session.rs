//! Conversation sessions: a static user profile plus an ordered sequence of
//! query/response turns.
//!
//! Sessions are exchanged as JSON:
//!
//! ```json
//! {"sessions": [{"session_id": "s1",
//!                "user_profile": ["I am ..."],
//!                "turns": [{"turn_id": 1, "utterance": "...",
//!                           "response": "...", "gold_level": "a"}]}]}
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reformulate::PersonalizationLevel;

/// One query turn. `response` is the system answer shown to the user (absent
/// for the final turn of a live session); `gold_level` is an optional
/// reference label carried by test fixtures.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub turn_id: u32,
    pub utterance: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_level: Option<PersonalizationLevel>,
}

/// A conversation session: profile sentences plus ordered turns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationSession {
    pub session_id: String,
    #[serde(default)]
    pub user_profile: Vec<String>,
    pub turns: Vec<Turn>,
}

impl ConversationSession {
    /// Topic id for the turn at `turn_index`: `<session_id>_<turn_id>`.
    pub fn topic_id(&self, turn_index: usize) -> Result<String> {
        let turn = self.turns.get(turn_index).ok_or_else(|| {
            Error::InvalidArg(format!(
                "turn index {turn_index} out of range for session {} ({} turns)",
                self.session_id,
                self.turns.len()
            ))
        })?;
        Ok(format!("{}_{}", self.session_id, turn.turn_id))
    }

    /// The turns strictly before `turn_index`, i.e. the dialog history.
    pub fn history(&self, turn_index: usize) -> &[Turn] {
        &self.turns[..turn_index.min(self.turns.len())]
    }

    fn validate(&self) -> Result<()> {
        if self.session_id.is_empty() {
            return Err(Error::Schema("empty session_id".into()));
        }
        let mut prev: u32 = 0;
        for turn in &self.turns {
            if turn.turn_id == 0 {
                return Err(Error::Schema(format!(
                    "session {}: turn id must be >= 1",
                    self.session_id
                )));
            }
            if turn.turn_id <= prev {
                return Err(Error::Schema(format!(
                    "session {}: non-increasing turn id {}",
                    self.session_id, turn.turn_id
                )));
            }
            if turn.utterance.is_empty() {
                return Err(Error::Schema(format!(
                    "session {} turn {}: empty utterance",
                    self.session_id, turn.turn_id
                )));
            }
            prev = turn.turn_id;
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct SessionFile {
    sessions: Vec<ConversationSession>,
}

/// Parses and validates the session JSON document.
pub fn parse_sessions(text: &str) -> Result<Vec<ConversationSession>> {
    let file: SessionFile = serde_json::from_str(text).map_err(json_error)?;
    let mut seen = std::collections::BTreeSet::new();
    for session in &file.sessions {
        session.validate()?;
        if !seen.insert(session.session_id.clone()) {
            return Err(Error::Conflict(format!(
                "duplicate session_id {}",
                session.session_id
            )));
        }
    }
    Ok(file.sessions)
}

/// Serializes sessions back to the JSON document form.
pub fn write_sessions(sessions: &[ConversationSession]) -> String {
    let file = SessionFile {
        sessions: sessions.to_vec(),
    };
    serde_json::to_string_pretty(&file).expect("session serialization cannot fail")
}

/// Maps a serde_json error to our error type: data errors (missing or
/// mistyped fields) become schema errors naming the field, syntax errors
/// keep their line/column.
pub(crate) fn json_error(err: serde_json::Error) -> Error {
    if err.is_data() {
        Error::Schema(err.to_string())
    } else {
        Error::Parse {
            line: err.line(),
            msg: err.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_session_one_turn_empty_profile() {
        let text = r#"{"sessions":[{"session_id":"s1","user_profile":[],
            "turns":[{"turn_id":1,"utterance":"hello"}]}]}"#;
        let sessions = parse_sessions(text).unwrap();
        assert_eq!(sessions.len(), 1);
        assert_eq!(sessions[0].user_profile.len(), 0);
        assert_eq!(sessions[0].turns.len(), 1);
        assert_eq!(sessions[0].turns[0].response, None);
    }

    #[test]
    fn profile_and_turn_order_preserved() {
        let profile: Vec<String> = (0..10).map(|i| format!("sentence {i}")).collect();
        let turns: Vec<Turn> = (1..=3)
            .map(|i| Turn {
                turn_id: i,
                utterance: format!("q{i}"),
                response: Some(format!("r{i}")),
                gold_level: None,
            })
            .collect();
        let session = ConversationSession {
            session_id: "s9".into(),
            user_profile: profile.clone(),
            turns: turns.clone(),
        };
        let text = write_sessions(&[session]);
        let parsed = parse_sessions(&text).unwrap();
        assert_eq!(parsed[0].user_profile, profile);
        assert_eq!(parsed[0].turns, turns);
    }

    #[test]
    fn duplicate_turn_id_rejected() {
        let text = r#"{"sessions":[{"session_id":"s1","user_profile":[],
            "turns":[{"turn_id":2,"utterance":"a"},{"turn_id":2,"utterance":"b"}]}]}"#;
        let err = parse_sessions(text).unwrap_err();
        assert!(err.to_string().contains("non-increasing turn id"), "{err}");
    }

    #[test]
    fn missing_field_named_in_error() {
        let text = r#"{"sessions":[{"session_id":"s1","turns":[{"turn_id":1}]}]}"#;
        let err = parse_sessions(text).unwrap_err();
        assert!(err.to_string().contains("utterance"), "{err}");
    }

    #[test]
    fn malformed_json_reports_position() {
        let err = parse_sessions("{\"sessions\": [ oops").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err}");
    }

    #[test]
    fn topic_id_convention() {
        let session = ConversationSession {
            session_id: "9-1".into(),
            user_profile: vec![],
            turns: vec![Turn {
                turn_id: 4,
                utterance: "q".into(),
                response: None,
                gold_level: None,
            }],
        };
        assert_eq!(session.topic_id(0).unwrap(), "9-1_4");
        assert!(session.topic_id(1).is_err());
    }

    #[test]
    fn gold_level_roundtrip() {
        let text = r#"{"sessions":[{"session_id":"s","user_profile":[],
            "turns":[{"turn_id":1,"utterance":"q","gold_level":"c"}]}]}"#;
        let sessions = parse_sessions(text).unwrap();
        assert_eq!(
            sessions[0].turns[0].gold_level,
            Some(PersonalizationLevel::Full)
        );
    }
}
