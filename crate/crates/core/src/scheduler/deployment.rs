//! Deployment documents: who is enrolled in a study and when its tasks run.

use std::collections::HashSet;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{minutes, ActivationPolicy, ReminderPolicy, ScheduleSpec};
use crate::clock::millis;
use crate::compiler::TaskKind;
use crate::sdl::StudyDefinition;
use crate::session::DEFAULT_SESSION_TTL;

#[derive(Debug, Error)]
pub enum DeploymentError {
    #[error("invalid deployment document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("deployment is for study {deployment:?}, not {study:?}")]
    StudyMismatch { deployment: String, study: String },
    #[error("schedule {index} references unknown {kind} assessment {assessment:?}")]
    UnknownAssessment {
        index: usize,
        kind: &'static str,
        assessment: String,
    },
    #[error("schedule {0} uses the pam task kind, which study documents cannot define")]
    UnsupportedKind(usize),
    #[error("participant {0:?} is enrolled twice")]
    DuplicateParticipant(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Deployment {
    pub study_id: String,
    #[serde(default)]
    pub schedules: Vec<ScheduleSpec>,
    #[serde(default)]
    pub participants: Vec<EnrolledParticipant>,
    #[serde(default)]
    pub reminders: ReminderPolicy,
    #[serde(default)]
    pub activation: ActivationPolicy,
    #[serde(rename = "sessionTtlMinutes", default = "default_ttl", with = "minutes")]
    pub session_ttl: Duration,
}

fn default_ttl() -> Duration {
    DEFAULT_SESSION_TTL
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct EnrolledParticipant {
    pub participant_id: String,
    #[serde(with = "millis")]
    pub enrolled_at: DateTime<Utc>,
}

impl Deployment {
    pub fn from_json(bytes: &[u8]) -> Result<Self, DeploymentError> {
        let d: Deployment = serde_json::from_slice(bytes)?;
        let mut seen = HashSet::new();
        for p in &d.participants {
            if !seen.insert(p.participant_id.as_str()) {
                return Err(DeploymentError::DuplicateParticipant(p.participant_id.clone()));
            }
        }
        Ok(d)
    }

    /// Checks that every schedule points at an assessment of `study`.
    pub fn check_against(&self, study: &StudyDefinition) -> Result<(), DeploymentError> {
        if self.study_id != study.study_id {
            return Err(DeploymentError::StudyMismatch {
                deployment: self.study_id.clone(),
                study: study.study_id.clone(),
            });
        }
        for (index, s) in self.schedules.iter().enumerate() {
            let a = &s.task.assessment;
            let found = match s.task.kind {
                TaskKind::Full => study.assessments.iter().any(|p| &p.full.identifier == a),
                TaskKind::Spot => study.assessments.iter().any(|p| &p.spot.identifier == a),
                TaskKind::Pam => return Err(DeploymentError::UnsupportedKind(index)),
            };
            if !found {
                return Err(DeploymentError::UnknownAssessment {
                    index,
                    kind: s.task.kind.as_str(),
                    assessment: a.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn participant(&self, participant_id: &str) -> Option<&EnrolledParticipant> {
        self.participants
            .iter()
            .find(|p| p.participant_id == participant_id)
    }
}
