//! Extraction and validation of the navigator's JSON reply.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentResponse {
    pub analysis: String,
    pub decision: String,
    pub memory: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no JSON object found in reply")]
    MalformedResponse,
    #[error("reply violates the response schema: {0}")]
    SchemaViolation(String),
    #[error("decision {decision:?} is not one of the offered options")]
    InvalidDecision { decision: String },
}

/// First complete JSON object embedded in `raw`, ignoring surrounding prose
/// and code fences.
pub fn first_json_object(raw: &str) -> Option<Map<String, Value>> {
    raw.match_indices('{').find_map(|(at, _)| {
        let mut stream = serde_json::Deserializer::from_str(&raw[at..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Object(m))) => Some(m),
            _ => None,
        }
    })
}

pub fn parse_response<S: AsRef<str>>(raw: &str, valid_ids: &[S]) -> Result<AgentResponse, ParseError> {
    let obj = first_json_object(raw).ok_or(ParseError::MalformedResponse)?;
    let field = |name: &str| -> Result<String, ParseError> {
        match obj.get(name) {
            None => Err(ParseError::SchemaViolation(format!("missing field {name:?}"))),
            Some(Value::String(s)) if s.trim().is_empty() => {
                Err(ParseError::SchemaViolation(format!("field {name:?} is empty")))
            }
            Some(Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(ParseError::SchemaViolation(format!("field {name:?} is not a string"))),
        }
    };
    let analysis = field("analysis")?;
    let decision = field("decision")?;
    let memory = field("memory")?;
    let decision_trimmed = decision.trim();
    if !valid_ids.iter().any(|v| v.as_ref() == decision_trimmed) {
        return Err(ParseError::InvalidDecision { decision });
    }
    Ok(AgentResponse { analysis, decision: decision_trimmed.to_string(), memory })
}

#[cfg(test)]
mod tests {
    use super::*;

    const IDS: [&str; 4] = ["step0_option0", "step0_option1", "step0_option2", "step0_option3"];

    #[test]
    fn prompt_example_parses() {
        let raw = r#"{
  "analysis": "Your reasoning here",
  "decision": "step0_option0",
  "memory": "Any memory to retain for future steps"
}"#;
        let r = parse_response(raw, &IDS).unwrap();
        assert_eq!(r.decision, "step0_option0");
        assert_eq!(r.memory, "Any memory to retain for future steps");
    }

    #[test]
    fn tolerates_prose_and_fences() {
        let raw = "Sure! {not json} here:\n```json\n{\"analysis\": \"a {b}\", \"decision\": \"step0_option2\", \"memory\": \"m\"}\n```\nbye {\"x\":1}";
        assert_eq!(parse_response(raw, &IDS).unwrap().decision, "step0_option2");
    }

    #[test]
    fn error_kinds() {
        assert_eq!(parse_response("no json here", &IDS), Err(ParseError::MalformedResponse));
        assert!(matches!(
            parse_response(r#"{"analysis": "...", "memory": "..."}"#, &IDS),
            Err(ParseError::SchemaViolation(_))
        ));
        assert!(matches!(
            parse_response(r#"{"analysis": "", "decision": "step0_option0", "memory": "m"}"#, &IDS),
            Err(ParseError::SchemaViolation(_))
        ));
        assert!(matches!(
            parse_response(r#"{"analysis": "a", "decision": 3, "memory": "m"}"#, &IDS),
            Err(ParseError::SchemaViolation(_))
        ));
        assert_eq!(
            parse_response(r#"{"analysis": "a", "decision": "step0_option7", "memory": "m"}"#, &IDS),
            Err(ParseError::InvalidDecision { decision: "step0_option7".into() })
        );
    }
}
