//! Deterministic parsing of model output into decisions.
//!
//! The accepted shape is a single JSON object with `reasoning` and `choice`
//! fields that terminates the output; the reasoning class additionally
//! requires exactly one think block before that object.

use serde_json::Value;

use super::telemetry;
use super::{AgentError, DecisionOutput, ModelClass};
use crate::game::Action;

const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";

/// Parses a complete model response.
///
/// The final JSON object must be the last thing in the output (trailing
/// whitespace aside). Extra JSON objects earlier in the text are ignored as
/// long as the terminal one is valid.
pub fn parse_decision(raw: &str, class: ModelClass) -> Result<DecisionOutput, AgentError> {
    telemetry::note_parse_call();

    let think_trace = match class {
        ModelClass::InstructionTuned => None,
        ModelClass::Reasoning => Some(extract_think_block(raw)?),
    };

    let (json_start, value) = terminal_json_object(raw)
        .ok_or_else(|| AgentError::MalformedOutput("no terminal JSON object found".to_string()))?;

    if let Some(((_, close_end), _)) = &think_trace {
        if json_start < *close_end {
            return Err(AgentError::FormatViolation(
                "the JSON object must follow the think block".to_string(),
            ));
        }
    }

    let object = value
        .as_object()
        .ok_or_else(|| AgentError::MalformedOutput("terminal JSON value is not an object".to_string()))?;
    let reasoning = object
        .get("reasoning")
        .and_then(Value::as_str)
        .ok_or_else(|| AgentError::MalformedOutput("missing string field \"reasoning\"".to_string()))?;
    let choice_token = object
        .get("choice")
        .and_then(Value::as_str)
        .ok_or_else(|| AgentError::MalformedOutput("missing string field \"choice\"".to_string()))?;
    let choice = match choice_token {
        "C" => Action::C,
        "D" => Action::D,
        other => {
            return Err(AgentError::MalformedOutput(format!(
                "choice must be exactly \"C\" or \"D\", got {other:?}"
            )))
        }
    };

    Ok(DecisionOutput {
        choice,
        reasoning: reasoning.to_string(),
        think_trace: think_trace.map(|(_, text)| text),
        raw: raw.to_string(),
    })
}

/// Returns the span (open index, end-of-close index) and inner text of the
/// single think block, or a format violation if there is not exactly one.
fn extract_think_block(raw: &str) -> Result<((usize, usize), String), AgentError> {
    let opens: Vec<usize> = raw.match_indices(THINK_OPEN).map(|(i, _)| i).collect();
    let closes: Vec<usize> = raw.match_indices(THINK_CLOSE).map(|(i, _)| i).collect();
    if opens.is_empty() && closes.is_empty() {
        return Err(AgentError::FormatViolation("missing think block".to_string()));
    }
    if opens.len() != 1 || closes.len() != 1 {
        return Err(AgentError::FormatViolation(format!(
            "expected exactly one think block, found {} open and {} close tags",
            opens.len(),
            closes.len()
        )));
    }
    let open = opens[0];
    let close = closes[0];
    if close < open {
        return Err(AgentError::FormatViolation("think close tag precedes open tag".to_string()));
    }
    let inner = raw[open + THINK_OPEN.len()..close].to_string();
    Ok(((open, close + THINK_CLOSE.len()), inner))
}

/// Finds the JSON object that terminates the output: the value starting at
/// the rightmost `{` that parses cleanly through the end of the text.
fn terminal_json_object(raw: &str) -> Option<(usize, Value)> {
    let trimmed_len = raw.trim_end().len();
    if trimmed_len == 0 || !raw[..trimmed_len].ends_with('}') {
        return None;
    }
    let tail = &raw[..trimmed_len];
    for (start, _) in tail.rmatch_indices('{') {
        if let Ok(value) = serde_json::from_str::<Value>(&tail[start..]) {
            return Some((start, value));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instruction_tuned_accepts_a_bare_json_object() {
        let out = parse_decision(r#"{"reasoning":"retaliate","choice":"D"}"#, ModelClass::InstructionTuned).unwrap();
        assert_eq!(out.choice, Action::D);
        assert_eq!(out.reasoning, "retaliate");
        assert!(out.think_trace.is_none());
    }

    #[test]
    fn reasoning_class_captures_the_think_trace() {
        let raw = "THINKING: <think>EV of D is higher</think>{\"reasoning\":\"x\",\"choice\":\"C\"}";
        let out = parse_decision(raw, ModelClass::Reasoning).unwrap();
        assert_eq!(out.choice, Action::C);
        assert_eq!(out.think_trace.as_deref(), Some("EV of D is higher"));
        assert_eq!(out.raw, raw);
    }

    #[test]
    fn prose_without_json_is_malformed() {
        for class in [ModelClass::InstructionTuned, ModelClass::Reasoning] {
            let raw = match class {
                ModelClass::InstructionTuned => "I choose cooperate".to_string(),
                ModelClass::Reasoning => "<think>hm</think>I choose cooperate".to_string(),
            };
            let err = parse_decision(&raw, class).unwrap_err();
            assert!(matches!(err, AgentError::MalformedOutput(_)), "{err}");
        }
    }

    #[test]
    fn trailing_text_after_the_object_is_rejected() {
        let raw = r#"{"reasoning":"r","choice":"C"} and that is final"#;
        assert!(matches!(
            parse_decision(raw, ModelClass::InstructionTuned),
            Err(AgentError::MalformedOutput(_))
        ));
    }

    #[test]
    fn earlier_json_objects_are_ignored_when_the_final_one_is_valid() {
        let raw = r#"{"scratch": 1} some text {"reasoning":"final","choice":"C"}"#;
        let out = parse_decision(raw, ModelClass::InstructionTuned).unwrap();
        assert_eq!(out.reasoning, "final");
    }

    #[test]
    fn braces_inside_reasoning_strings_do_not_confuse_the_scanner() {
        let raw = r#"{"reasoning": "maybe {\"choice\": \"D\"} was tempting", "choice": "C"}"#;
        let out = parse_decision(raw, ModelClass::InstructionTuned).unwrap();
        assert_eq!(out.choice, Action::C);
        assert!(out.reasoning.contains("tempting"));
    }

    #[test]
    fn lowercase_or_wordy_choices_are_malformed() {
        for bad in [r#"{"reasoning":"r","choice":"c"}"#, r#"{"reasoning":"r","choice":"Cooperate"}"#] {
            assert!(matches!(
                parse_decision(bad, ModelClass::InstructionTuned),
                Err(AgentError::MalformedOutput(_))
            ));
        }
    }

    #[test]
    fn reasoning_class_rejects_missing_or_multiple_think_blocks() {
        let missing = r#"{"reasoning":"r","choice":"C"}"#;
        assert!(matches!(
            parse_decision(missing, ModelClass::Reasoning),
            Err(AgentError::FormatViolation(_))
        ));
        let doubled = "<think>a</think><think>b</think>{\"reasoning\":\"r\",\"choice\":\"C\"}";
        assert!(matches!(
            parse_decision(doubled, ModelClass::Reasoning),
            Err(AgentError::FormatViolation(_))
        ));
    }

    #[test]
    fn json_before_the_think_block_is_a_violation() {
        let raw = "{\"reasoning\":\"r\",\"choice\":\"C\"}<think>late</think>";
        let err = parse_decision(raw, ModelClass::Reasoning).unwrap_err();
        // Either shape is a failure; the terminal scan sees no valid object.
        assert!(matches!(err, AgentError::FormatViolation(_) | AgentError::MalformedOutput(_)));
    }

    #[test]
    fn instruction_tuned_ignores_stray_think_tags() {
        let raw = "<think>whatever</think>{\"reasoning\":\"r\",\"choice\":\"D\"}";
        let out = parse_decision(raw, ModelClass::InstructionTuned).unwrap();
        assert_eq!(out.choice, Action::D);
        assert!(out.think_trace.is_none());
    }
}
