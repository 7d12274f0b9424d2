//! Response bodies that are not core types serialized as-is.

use std::collections::BTreeMap;

use serde::Serialize;
use visurvey_core::{Answer, Occurrence, SessionStatus, TaskKind};
use visurvey_core::compiler::Step;

/// An occurrence as listed by the due endpoint.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct OccurrenceView {
    #[serde(flatten)]
    pub occurrence: Occurrence,
    /// True for a spot task whose active item set is currently empty, so
    /// the session would only show the no-items summary.
    pub spot_has_no_items: bool,
}

/// Everything a client needs to render the current step.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct StepPayload {
    pub index: usize,
    #[serde(flatten)]
    pub step: Step,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionView {
    pub session_id: String,
    pub occurrence_id: String,
    pub participant_id: String,
    pub study_id: String,
    pub assessment_id: String,
    pub task_kind: TaskKind,
    pub status: SessionStatus,
    pub cursor: usize,
    pub step_count: usize,
    pub step: Option<StepPayload>,
    /// Recorded answers by step id, including steps left by going back.
    pub answers: BTreeMap<String, Answer>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub envelope_id: Option<String>,
}
