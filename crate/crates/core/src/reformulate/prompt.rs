//! Prompt assembly for joint personalization-level identification and query
//! reformulation. One rendered prompt asks the model for the level, a
//! context-free rewrite, a pseudo response, and a personalized (or
//! alternative) rewrite, all in a single call.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::session::ConversationSession;

const DEFAULT_INSTRUCTION: &str = "\
You will be given an information-seeking dialog between a user and an assistant, \
together with the user's profile. Your tasks:
(1) Decide how much the last question needs personalization from the profile to \
retrieve relevant results. Choose level a, b, or c as defined below.
(2) Rewrite the last question so it fully expresses the information need without \
referring to the dialog context or the profile. For level b or c, add helpful \
profile elements to the rewrite; for level a, do not use profile information.
(3) Explain your reasoning for the level and the rewrite.
(4) Provide an informative response to your rewritten question.";

const DEFAULT_LEVEL_EXAMPLES: &str = "\
Level a (non-personalization): the question is self-contained and profile \
information must not be added.
  Example question: \"What year did the first moon landing happen?\"
  Example profile: \"I am afraid of heights.\" -> the profile is irrelevant; level a.
Level b (partial personalization): the question retrieves general material on \
its own, and the profile is an extra perk that can sharpen the results.
  Example question: \"Recommend some hiking trails nearby.\"
  Example profile: \"I live in Denver.\" -> location helps but is optional; level b.
Level c (personalization): the profile carries constraints that are \
indispensable for a correct answer.
  Example question: \"Do I need a visa for this trip?\"
  Example profile: \"I am a Canadian citizen.\" -> citizenship decides the answer; level c.";

const DEFAULT_QR_EXAMPLES: &str = "\
Demonstration 1:
  Profile: 1. I keep saltwater fish.
  Dialog: User: What do clownfish eat? System: Mostly algae and zooplankton.
  Question: How big a tank do they need?
  Level: b
  Rewrite: How big a tank do clownfish need?
  Personalized rewrite: How big a saltwater tank do clownfish need?
Demonstration 2:
  Profile: 1. I am allergic to penicillin.
  Dialog: (empty)
  Question: What antibiotic should I ask my doctor about for strep throat?
  Level: c
  Rewrite: What antibiotics treat strep throat?
  Personalized rewrite: What antibiotics treat strep throat for someone allergic to penicillin?";

const DEFAULT_COT_DIRECTIVE: &str = "\
Think step by step: first reason about which level applies, then derive the \
rewrites from that level. Put the full reasoning in the `reasoning` field \
before the final answers.";

const DEFAULT_OUTPUT_FORMAT: &str = "\
Reply with exactly one fenced JSON object:
```json
{\"level\": \"a|b|c\", \"reasoning\": \"...\", \"rewrite\": \"...\", \
\"personalized_rewrite\": \"...\", \"response\": \"...\", \
\"personalized_response\": \"...\"}
```
`rewrite` is the non-personalized rewrite and `response` its informative \
pseudo response. For level b or c, `personalized_rewrite` (with optional \
`personalized_response`) uses the profile; for level a, provide an \
alternative rewrite that still uses no profile information.";

/// The prompt scaffold: instruction, level definitions with examples,
/// rewriting demonstrations, reasoning directive, and the output stanza.
#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub instruction: String,
    pub level_examples: String,
    pub qr_examples: String,
    pub cot_directive: String,
    pub output_format: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate {
            instruction: DEFAULT_INSTRUCTION.to_string(),
            level_examples: DEFAULT_LEVEL_EXAMPLES.to_string(),
            qr_examples: DEFAULT_QR_EXAMPLES.to_string(),
            cot_directive: DEFAULT_COT_DIRECTIVE.to_string(),
            output_format: DEFAULT_OUTPUT_FORMAT.to_string(),
        }
    }
}

/// Section markers; the echo backend locates dialog content through these.
pub const PROFILE_MARKER: &str = "**User Profile**";
pub const DIALOG_MARKER: &str = "**Dialog Context**";
pub const QUESTION_MARKER: &str = "**Last Question**";

impl PromptTemplate {
    /// Renders the full prompt for the turn at `turn_index`.
    ///
    /// Deterministic; contains every profile sentence verbatim and the
    /// history turns in order. Errors when `turn_index` is out of range.
    pub fn render(&self, session: &ConversationSession, turn_index: usize) -> Result<String> {
        let turn = session.turns.get(turn_index).ok_or_else(|| {
            Error::InvalidArg(format!(
                "turn index {turn_index} out of range for session {} ({} turns)",
                session.session_id,
                session.turns.len()
            ))
        })?;
        let mut prompt = String::new();
        writeln!(prompt, "# Task Description").unwrap();
        writeln!(prompt, "{}\n", self.instruction).unwrap();
        writeln!(prompt, "# Personalization Levels").unwrap();
        writeln!(prompt, "{}\n", self.level_examples).unwrap();
        writeln!(prompt, "# Rewriting Demonstrations").unwrap();
        writeln!(prompt, "{}\n", self.qr_examples).unwrap();
        writeln!(prompt, "# Reasoning").unwrap();
        writeln!(prompt, "{}\n", self.cot_directive).unwrap();
        writeln!(prompt, "# Output Format").unwrap();
        writeln!(prompt, "{}\n", self.output_format).unwrap();

        writeln!(prompt, "{PROFILE_MARKER}").unwrap();
        if session.user_profile.is_empty() {
            writeln!(prompt, "(none)").unwrap();
        } else {
            for (i, sentence) in session.user_profile.iter().enumerate() {
                writeln!(prompt, "{}. {sentence}", i + 1).unwrap();
            }
        }
        writeln!(prompt).unwrap();

        writeln!(prompt, "{DIALOG_MARKER}").unwrap();
        for prior in session.history(turn_index) {
            writeln!(prompt, "User: {}", prior.utterance).unwrap();
            if let Some(response) = &prior.response {
                writeln!(prompt, "System: {response}").unwrap();
            }
        }
        writeln!(prompt).unwrap();

        writeln!(prompt, "{QUESTION_MARKER}").unwrap();
        writeln!(prompt, "{}", turn.utterance).unwrap();
        Ok(prompt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::Turn;

    fn session() -> ConversationSession {
        ConversationSession {
            session_id: "s1".into(),
            user_profile: vec!["I collect stamps.".into(), "I speak French.".into()],
            turns: (1..=3)
                .map(|i| Turn {
                    turn_id: i,
                    utterance: format!("question {i}"),
                    response: Some(format!("answer {i}")),
                    gold_level: None,
                })
                .collect(),
        }
    }

    #[test]
    fn first_turn_has_empty_dialog_block() {
        let prompt = PromptTemplate::default().render(&session(), 0).unwrap();
        let dialog = prompt
            .split(DIALOG_MARKER)
            .nth(1)
            .unwrap()
            .split(QUESTION_MARKER)
            .next()
            .unwrap();
        assert_eq!(dialog.trim(), "");
        assert!(prompt.contains("question 1"));
    }

    #[test]
    fn render_is_deterministic() {
        let template = PromptTemplate::default();
        let a = template.render(&session(), 2).unwrap();
        let b = template.render(&session(), 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn history_contains_prior_turns_in_order() {
        let prompt = PromptTemplate::default().render(&session(), 2).unwrap();
        let dialog = prompt
            .split(DIALOG_MARKER)
            .nth(1)
            .unwrap()
            .split(QUESTION_MARKER)
            .next()
            .unwrap();
        let q1 = dialog.find("User: question 1").expect("turn 1 present");
        let a1 = dialog.find("System: answer 1").expect("answer 1 present");
        let q2 = dialog.find("User: question 2").expect("turn 2 present");
        assert!(q1 < a1 && a1 < q2);
        assert!(!dialog.contains("question 3"));
    }

    #[test]
    fn profile_sentences_verbatim() {
        let prompt = PromptTemplate::default().render(&session(), 0).unwrap();
        assert!(prompt.contains("I collect stamps."));
        assert!(prompt.contains("I speak French."));
    }

    #[test]
    fn out_of_range_turn_errors() {
        assert!(PromptTemplate::default().render(&session(), 3).is_err());
    }
}
