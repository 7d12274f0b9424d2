//! Answer scripts: scripted answers replayed against a task plan.
//!
//! An entry is a choice value (`"hard"`), a list of item ids
//! (`["Bathing"]`), `null` for an acknowledge, a tagged answer object
//! (`{"type": "item", "itemId": "Bathing"}`), or any of those wrapped as
//! `{"stepId" | "index": ..., "answer": ...}` to pin the step it is meant for.
//! Summary steps the script does not address are acknowledged automatically.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer};
use serde_json::Value;
use thiserror::Error;
use visurvey_core::session::SessionError;
use visurvey_core::{Answer, IdSource, ManualClock, ResultEnvelope, SurveySession, TaskPlan};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct AnswerScript {
    pub participant_id: String,
    /// Full or spot identifier of the assessment pair to run.
    #[serde(default)]
    pub assessment: Option<String>,
    #[serde(default)]
    pub full: Vec<ScriptEntry>,
    #[serde(default)]
    pub spot: Vec<ScriptEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Next,
    StepId(String),
    Index(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScriptEntry {
    pub target: Target,
    pub answer: Answer,
}

impl ScriptEntry {
    pub fn answer(answer: Answer) -> Self {
        ScriptEntry { target: Target::Next, answer }
    }

    fn aims_at(&self, step_id: &str, index: usize) -> bool {
        match &self.target {
            Target::Next => true,
            Target::StepId(id) => id == step_id,
            Target::Index(i) => *i == index,
        }
    }
}

fn answer_from_value(v: Value) -> Result<Answer, String> {
    match v {
        Value::Null => Ok(Answer::Ack),
        Value::String(value) => Ok(Answer::Choice { value }),
        Value::Array(items) => items
            .into_iter()
            .map(|i| match i {
                Value::String(s) => Ok(s),
                other => Err(format!("item ids must be strings, found {other}")),
            })
            .collect::<Result<_, _>>()
            .map(|item_ids| Answer::Items { item_ids }),
        obj @ Value::Object(_) => serde_json::from_value(obj).map_err(|e| e.to_string()),
        other => Err(format!("not an answer: {other}")),
    }
}

impl<'de> Deserialize<'de> for ScriptEntry {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        let Value::Object(mut map) = v else {
            return answer_from_value(v).map(ScriptEntry::answer).map_err(D::Error::custom);
        };
        if !map.contains_key("answer") {
            return answer_from_value(Value::Object(map))
                .map(ScriptEntry::answer)
                .map_err(D::Error::custom);
        }
        let answer = answer_from_value(map.remove("answer").unwrap()).map_err(D::Error::custom)?;
        let target = match (map.remove("stepId"), map.remove("index")) {
            (None, None) => Target::Next,
            (Some(Value::String(id)), None) => Target::StepId(id),
            (None, Some(Value::Number(n))) if n.as_u64().is_some() => Target::Index(n.as_u64().unwrap() as usize),
            _ => return Err(D::Error::custom("give at most one of a string stepId or a numeric index")),
        };
        if let Some(k) = map.keys().next() {
            return Err(D::Error::custom(format!("unknown field `{k}` in script entry")));
        }
        Ok(ScriptEntry { target, answer })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScriptError {
    #[error("step {step_id:?}: {reason}")]
    Mismatch { step_id: String, reason: String },
    #[error("step {step_id:?}: script has no answer left")]
    Exhausted { step_id: String },
    #[error("step {step_id:?}: next script entry is meant for another step")]
    WrongTarget { step_id: String },
    #[error("{0} script entries left over after the session completed")]
    Unused(usize),
    #[error("{0}")]
    Session(String),
}

impl ScriptError {
    pub fn step_id(&self) -> Option<&str> {
        match self {
            ScriptError::Mismatch { step_id, .. }
            | ScriptError::Exhausted { step_id }
            | ScriptError::WrongTarget { step_id } => Some(step_id),
            _ => None,
        }
    }
}

/// Runs `plan` to completion, one clock second per answer.
pub fn run_script(
    plan: TaskPlan,
    participant_id: &str,
    entries: &[ScriptEntry],
    clock: &ManualClock,
    ids: &dyn IdSource,
) -> Result<ResultEnvelope, ScriptError> {
    let mut session = SurveySession::start(plan, participant_id, clock, ids)
        .map_err(|e| ScriptError::Session(e.to_string()))?;
    let mut pending = entries.iter().peekable();
    while let Some(step) = session.current_step().cloned() {
        let index = session.cursor();
        let answer = match pending.peek() {
            Some(e) if step.is_summary() && !(e.answer == Answer::Ack && e.aims_at(&step.step_id, index)) => {
                Answer::Ack
            }
            None if step.is_summary() => Answer::Ack,
            None => return Err(ScriptError::Exhausted { step_id: step.step_id }),
            Some(e) if !e.aims_at(&step.step_id, index) => {
                return Err(ScriptError::WrongTarget { step_id: step.step_id })
            }
            Some(_) => pending.next().unwrap().answer.clone(),
        };
        clock.advance(chrono::Duration::seconds(1));
        session.submit_answer(answer, clock).map_err(|e| match e {
            SessionError::AnswerMismatch { step_id, reason } => ScriptError::Mismatch { step_id, reason },
            other => ScriptError::Session(other.to_string()),
        })?;
    }
    let left = pending.count();
    if left > 0 {
        return Err(ScriptError::Unused(left));
    }
    session.finalize().map_err(|e| ScriptError::Session(e.to_string()))
}
