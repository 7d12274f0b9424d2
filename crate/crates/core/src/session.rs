//! Survey sessions: a cursor over a task plan with timed, last-write-wins
//! answers and back-navigation.

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use crate::clock::{millis, Clock, IdSource};
use crate::compiler::{Selection, Step, StepKind, TaskKind, TaskPlan};

/// Sessions left unfinished for longer than this are abandoned.
pub const DEFAULT_SESSION_TTL: Duration = Duration::hours(24);

/// Version of the envelope record layout.
pub const ENVELOPE_SCHEMA_VERSION: u32 = 1;

const ENVELOPE_NAMESPACE: Uuid = Uuid::from_u128(0x5d1c_4a3e_9b7f_4e21_8c60_2f0a_71b3_c9e4);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SessionError {
    #[error("session is {0}, not in progress")]
    NotInProgress(SessionStatus),
    #[error("answer does not fit step {step_id:?}: {reason}")]
    AnswerMismatch { step_id: String, reason: String },
    #[error("already at the first step")]
    AtFirstStep,
    #[error("session is {0}, not completed")]
    NotCompleted(SessionStatus),
    #[error("task plan has no steps")]
    EmptyPlan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    InProgress,
    Completed,
    Abandoned,
}

impl std::fmt::Display for SessionStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SessionStatus::InProgress => "in_progress",
            SessionStatus::Completed => "completed",
            SessionStatus::Abandoned => "abandoned",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase", rename_all_fields = "camelCase")]
pub enum Answer {
    Choice { value: String },
    Items { item_ids: Vec<String> },
    Item { item_id: String },
    Ack,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StepResult {
    pub step_id: String,
    /// Set for single-choice item steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_id: Option<String>,
    pub answer: Answer,
    #[serde(with = "millis")]
    pub presented_at: DateTime<Utc>,
    #[serde(with = "millis")]
    pub answered_at: DateTime<Utc>,
}

/// Immutable record of a completed session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ResultEnvelope {
    pub envelope_id: String,
    pub session_id: String,
    pub participant_id: String,
    pub study_id: String,
    pub assessment_id: String,
    pub task_kind: TaskKind,
    pub schema_version: u32,
    #[serde(with = "millis")]
    pub completed_at: DateTime<Utc>,
    pub results: Vec<StepResult>,
}

#[derive(Debug, Clone)]
pub struct SurveySession {
    session_id: String,
    participant_id: String,
    plan: TaskPlan,
    cursor: usize,
    answers: BTreeMap<String, StepResult>,
    status: SessionStatus,
    started_at: DateTime<Utc>,
    ended_at: Option<DateTime<Utc>>,
    presented_at: DateTime<Utc>,
}

impl SurveySession {
    pub fn start(
        plan: TaskPlan,
        participant_id: &str,
        clock: &dyn Clock,
        ids: &dyn IdSource,
    ) -> Result<Self, SessionError> {
        if plan.steps.is_empty() {
            return Err(SessionError::EmptyPlan);
        }
        let now = clock.now();
        Ok(SurveySession {
            session_id: ids.next_id("session"),
            participant_id: participant_id.to_string(),
            plan,
            cursor: 0,
            answers: BTreeMap::new(),
            status: SessionStatus::InProgress,
            started_at: now,
            ended_at: None,
            presented_at: now,
        })
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn participant_id(&self) -> &str {
        &self.participant_id
    }

    pub fn plan(&self) -> &TaskPlan {
        &self.plan
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn started_at(&self) -> DateTime<Utc> {
        self.started_at
    }

    pub fn ended_at(&self) -> Option<DateTime<Utc>> {
        self.ended_at
    }

    pub fn answers(&self) -> &BTreeMap<String, StepResult> {
        &self.answers
    }

    /// The step at the cursor, `None` once the cursor is past the end.
    pub fn current_step(&self) -> Option<&Step> {
        self.plan.steps.get(self.cursor)
    }

    pub fn current_presented_at(&self) -> DateTime<Utc> {
        self.presented_at
    }

    fn ensure_in_progress(&self) -> Result<(), SessionError> {
        match self.status {
            SessionStatus::InProgress => Ok(()),
            other => Err(SessionError::NotInProgress(other)),
        }
    }

    /// Records `answer` for the current step and moves forward. On error the
    /// session is unchanged.
    pub fn submit_answer(&mut self, answer: Answer, clock: &dyn Clock) -> Result<(), SessionError> {
        self.ensure_in_progress()?;
        let step = self
            .current_step()
            .ok_or(SessionError::NotInProgress(self.status))?;
        let (answer, item_id) = check_answer(step, answer)?;
        let step_id = step.step_id.clone();

        let now = clock.now().max(self.presented_at);
        self.answers.insert(
            step_id.clone(),
            StepResult {
                step_id,
                item_id,
                answer,
                presented_at: self.presented_at,
                answered_at: now,
            },
        );
        self.cursor += 1;
        self.presented_at = now;
        if self.cursor == self.plan.steps.len() && self.all_answered() {
            self.status = SessionStatus::Completed;
            self.ended_at = Some(now);
        }
        Ok(())
    }

    pub fn go_back(&mut self, clock: &dyn Clock) -> Result<(), SessionError> {
        self.ensure_in_progress()?;
        if self.cursor == 0 {
            return Err(SessionError::AtFirstStep);
        }
        self.cursor -= 1;
        self.presented_at = clock.now().max(self.presented_at);
        Ok(())
    }

    /// Marks the session abandoned when it has been open longer than `ttl`.
    /// Returns whether the status changed.
    pub fn abandon_if_stale(&mut self, now: DateTime<Utc>, ttl: Duration) -> bool {
        if self.status == SessionStatus::InProgress && now - self.started_at > ttl {
            self.status = SessionStatus::Abandoned;
            self.ended_at = Some(now);
            true
        } else {
            false
        }
    }

    fn all_answered(&self) -> bool {
        self.plan
            .steps
            .iter()
            .all(|s| self.answers.contains_key(&s.step_id))
    }

    /// Builds the envelope of a completed session. Repeated calls return the
    /// same envelope; its id is derived from the session id.
    pub fn finalize(&self) -> Result<ResultEnvelope, SessionError> {
        if self.status != SessionStatus::Completed {
            return Err(SessionError::NotCompleted(self.status));
        }
        let results = self
            .plan
            .steps
            .iter()
            .filter(|s| !s.is_summary())
            .map(|s| self.answers[&s.step_id].clone())
            .collect();
        Ok(ResultEnvelope {
            envelope_id: Uuid::new_v5(&ENVELOPE_NAMESPACE, self.session_id.as_bytes()).to_string(),
            session_id: self.session_id.clone(),
            participant_id: self.participant_id.clone(),
            study_id: self.plan.study_id.clone(),
            assessment_id: self.plan.plan_id.clone(),
            task_kind: self.plan.task_kind,
            schema_version: ENVELOPE_SCHEMA_VERSION,
            completed_at: self.ended_at.expect("completed sessions have an end time"),
            results,
        })
    }
}

pub fn start_session(
    plan: TaskPlan,
    participant_id: &str,
    clock: &dyn Clock,
    ids: &dyn IdSource,
) -> Result<SurveySession, SessionError> {
    SurveySession::start(plan, participant_id, clock, ids)
}

fn mismatch(step: &Step, reason: impl Into<String>) -> SessionError {
    SessionError::AnswerMismatch {
        step_id: step.step_id.clone(),
        reason: reason.into(),
    }
}

/// Checks the answer against the step and normalizes it: grid selections are
/// de-duplicated into grid order, a single-select grid stores one `Item`.
fn check_answer(step: &Step, answer: Answer) -> Result<(Answer, Option<String>), SessionError> {
    match (&step.kind, answer) {
        (StepKind::SingleChoice { item, choices, .. }, Answer::Choice { value }) => {
            if !choices.iter().any(|c| c.value == value) {
                let allowed: Vec<_> = choices.iter().map(|c| c.value.as_str()).collect();
                return Err(mismatch(
                    step,
                    format!("{value:?} is not one of {}", allowed.join(", ")),
                ));
            }
            Ok((Answer::Choice { value }, Some(item.identifier.clone())))
        }
        (StepKind::Grid { items, selection, .. }, answer @ (Answer::Items { .. } | Answer::Item { .. })) => {
            let picked = match answer {
                Answer::Items { item_ids } => item_ids,
                Answer::Item { item_id } => vec![item_id],
                _ => unreachable!(),
            };
            if let Some(bad) = picked
                .iter()
                .find(|id| !items.iter().any(|i| &i.identifier == *id))
            {
                return Err(mismatch(step, format!("{bad:?} is not in the grid")));
            }
            let ordered: Vec<String> = items
                .iter()
                .filter(|i| picked.contains(&i.identifier))
                .map(|i| i.identifier.clone())
                .collect();
            match selection {
                Selection::Multiple => Ok((Answer::Items { item_ids: ordered }, None)),
                Selection::Single if ordered.len() == 1 && picked.len() == 1 => Ok((
                    Answer::Item {
                        item_id: ordered.into_iter().next().unwrap(),
                    },
                    None,
                )),
                Selection::Single => Err(mismatch(
                    step,
                    format!("exactly one item must be selected, got {}", picked.len()),
                )),
            }
        }
        (StepKind::Summary { .. }, Answer::Ack) => Ok((Answer::Ack, None)),
        (kind, answer) => Err(mismatch(
            step,
            format!("{} answer on a {} step", answer_name(&answer), step_name(kind)),
        )),
    }
}

fn answer_name(a: &Answer) -> &'static str {
    match a {
        Answer::Choice { .. } => "choice",
        Answer::Items { .. } => "items",
        Answer::Item { .. } => "item",
        Answer::Ack => "ack",
    }
}

fn step_name(k: &StepKind) -> &'static str {
    match k {
        StepKind::SingleChoice { .. } => "singleChoice",
        StepKind::Grid { .. } => "grid",
        StepKind::Summary { .. } => "summary",
    }
}
