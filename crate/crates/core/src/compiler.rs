//! Compiles study definitions into runnable task plans.
//!
//! A full plan asks the shared full prompt once per item, a spot plan shows
//! a single grid over the items activated by the participant's last full
//! answers, and a PAM plan is a one-pick image grid.

use std::collections::HashSet;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::millis;
use crate::sdl::{
    ActivationRule, AssessmentPair, ChoiceDef, ItemDef, SpotOptionsDef, StudyDefinition,
    SummaryDef,
};
use crate::session::{Answer, ResultEnvelope};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CompileError {
    #[error("task has no items")]
    EmptyItems,
    #[error("unknown item {0:?}")]
    UnknownItem(String),
    #[error("no answer recorded for item {0:?}")]
    MissingAnswer(String),
    #[error("result for step {0:?} is not a choice answer")]
    UnexpectedAnswer(String),
    #[error("envelope {0} is not from a full assessment")]
    NotFullEnvelope(String),
    #[error("duplicate step id {0:?}")]
    DuplicateStepId(String),
    #[error("no assessment named {0:?}")]
    UnknownAssessment(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Full,
    Spot,
    Pam,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Full => "full",
            TaskKind::Spot => "spot",
            TaskKind::Pam => "pam",
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(TaskKind::Full),
            "spot" => Ok(TaskKind::Spot),
            "pam" => Ok(TaskKind::Pam),
            other => Err(format!("unknown task kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct TaskPlan {
    pub plan_id: String,
    pub study_id: String,
    pub task_kind: TaskKind,
    pub steps: Vec<Step>,
}

impl TaskPlan {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn step(&self, step_id: &str) -> Option<&Step> {
        self.steps.iter().find(|s| s.step_id == step_id)
    }

    pub fn with_study(mut self, study_id: impl Into<String>) -> Self {
        self.study_id = study_id.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Step {
    pub step_id: String,
    #[serde(flatten)]
    pub kind: StepKind,
}

impl Step {
    pub fn is_summary(&self) -> bool {
        matches!(self.kind, StepKind::Summary { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "camelCase", rename_all_fields = "camelCase")]
pub enum StepKind {
    /// One item shown with the full prompt and the choice buttons.
    SingleChoice {
        prompt: String,
        item: ItemDef,
        choices: Vec<ChoiceDef>,
    },
    /// An image grid; spot grids allow any subset, PAM grids exactly one.
    Grid {
        prompt: String,
        selection: Selection,
        items: Vec<ItemDef>,
        #[serde(skip_serializing_if = "Option::is_none")]
        options: Option<SpotOptionsDef>,
    },
    Summary { summary: SummaryDef },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    Multiple,
    Single,
}

/// Items a participant sees in spot assessments, in study order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ActiveItemSet {
    pub item_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derived_from: Option<String>,
    #[serde(default, with = "millis::option", skip_serializing_if = "Option::is_none")]
    pub derived_at: Option<DateTime<Utc>>,
}

impl ActiveItemSet {
    /// The set used before any full assessment was completed.
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.item_ids.is_empty()
    }
}

fn step_id(assessment: &str, suffix: &str) -> String {
    format!("{assessment}.{suffix}")
}

fn summary_step(assessment: &str, summary: &SummaryDef) -> Step {
    Step {
        step_id: step_id(assessment, "summary"),
        kind: StepKind::Summary {
            summary: summary.clone(),
        },
    }
}

fn check_unique(steps: &[Step]) -> Result<(), CompileError> {
    let mut seen = HashSet::new();
    for s in steps {
        if !seen.insert(s.step_id.as_str()) {
            return Err(CompileError::DuplicateStepId(s.step_id.clone()));
        }
    }
    Ok(())
}

pub fn compile_full_task(pair: &AssessmentPair, items: &[ItemDef]) -> Result<TaskPlan, CompileError> {
    if items.is_empty() {
        return Err(CompileError::EmptyItems);
    }
    let full = &pair.full;
    let mut steps: Vec<Step> = items
        .iter()
        .map(|item| Step {
            step_id: step_id(&full.identifier, &item.identifier),
            kind: StepKind::SingleChoice {
                prompt: full.prompt.clone(),
                item: item.clone(),
                choices: full.choices.clone(),
            },
        })
        .collect();
    steps.push(summary_step(&full.identifier, &full.summary));
    check_unique(&steps)?;
    Ok(TaskPlan {
        plan_id: full.identifier.clone(),
        study_id: String::new(),
        task_kind: TaskKind::Full,
        steps,
    })
}

/// Picks the items whose full-assessment answer is an activating value.
pub fn derive_active_items(
    full_results: &ResultEnvelope,
    rule: &ActivationRule,
    items: &[ItemDef],
) -> Result<ActiveItemSet, CompileError> {
    if full_results.task_kind != TaskKind::Full {
        return Err(CompileError::NotFullEnvelope(full_results.envelope_id.clone()));
    }
    let mut answers = std::collections::HashMap::new();
    for r in &full_results.results {
        let Some(item_id) = &r.item_id else {
            return Err(CompileError::UnexpectedAnswer(r.step_id.clone()));
        };
        if !items.iter().any(|i| &i.identifier == item_id) {
            return Err(CompileError::UnknownItem(item_id.clone()));
        }
        let Answer::Choice { value } = &r.answer else {
            return Err(CompileError::UnexpectedAnswer(r.step_id.clone()));
        };
        answers.insert(item_id.as_str(), value.as_str());
    }
    let mut item_ids = Vec::new();
    for item in items {
        let value = answers
            .get(item.identifier.as_str())
            .ok_or_else(|| CompileError::MissingAnswer(item.identifier.clone()))?;
        if rule.activates(value) {
            item_ids.push(item.identifier.clone());
        }
    }
    Ok(ActiveItemSet {
        item_ids,
        derived_from: Some(full_results.session_id.clone()),
        derived_at: Some(full_results.completed_at),
    })
}

pub fn compile_spot_task(
    pair: &AssessmentPair,
    active: &ActiveItemSet,
    items: &[ItemDef],
) -> Result<TaskPlan, CompileError> {
    let spot = &pair.spot;
    if let Some(unknown) = active
        .item_ids
        .iter()
        .find(|id| !items.iter().any(|i| &i.identifier == *id))
    {
        return Err(CompileError::UnknownItem(unknown.clone()));
    }
    let steps = if active.is_empty() {
        vec![summary_step(&spot.identifier, &spot.no_items_summary)]
    } else {
        let grid_items = items
            .iter()
            .filter(|i| active.item_ids.contains(&i.identifier))
            .cloned()
            .collect();
        vec![
            Step {
                step_id: step_id(&spot.identifier, "grid"),
                kind: StepKind::Grid {
                    prompt: spot.prompt.clone(),
                    selection: Selection::Multiple,
                    items: grid_items,
                    options: Some(spot.options.clone()),
                },
            },
            summary_step(&spot.identifier, &spot.summary),
        ]
    };
    Ok(TaskPlan {
        plan_id: spot.identifier.clone(),
        study_id: String::new(),
        task_kind: TaskKind::Spot,
        steps,
    })
}

pub const PAM_IDENTIFIER: &str = "PAM";

/// A PAM plan with the default identifier and summary.
pub fn compile_pam_task(items: &[ItemDef], prompt: &str) -> Result<TaskPlan, CompileError> {
    let summary = SummaryDef {
        identifier: "PAM Summary Identifier".into(),
        title: "Thanks".into(),
        text: "Thank you for reporting your mood".into(),
        extra: Default::default(),
    };
    compile_pam_task_with(PAM_IDENTIFIER, items, prompt, &summary, None)
}

pub fn compile_pam_task_with(
    identifier: &str,
    items: &[ItemDef],
    prompt: &str,
    summary: &SummaryDef,
    options: Option<&SpotOptionsDef>,
) -> Result<TaskPlan, CompileError> {
    if items.is_empty() {
        return Err(CompileError::EmptyItems);
    }
    let steps = vec![
        Step {
            step_id: step_id(identifier, "grid"),
            kind: StepKind::Grid {
                prompt: prompt.to_string(),
                selection: Selection::Single,
                items: items.to_vec(),
                options: options.cloned(),
            },
        },
        summary_step(identifier, summary),
    ];
    Ok(TaskPlan {
        plan_id: identifier.to_string(),
        study_id: String::new(),
        task_kind: TaskKind::Pam,
        steps,
    })
}

impl StudyDefinition {
    pub fn compile_full(&self, pair: &AssessmentPair) -> Result<TaskPlan, CompileError> {
        Ok(compile_full_task(pair, &self.items)?.with_study(&self.study_id))
    }

    pub fn compile_spot(
        &self,
        pair: &AssessmentPair,
        active: &ActiveItemSet,
    ) -> Result<TaskPlan, CompileError> {
        Ok(compile_spot_task(pair, active, &self.items)?.with_study(&self.study_id))
    }

    pub fn compile_pam(&self, prompt: &str) -> Result<TaskPlan, CompileError> {
        Ok(compile_pam_task(&self.items, prompt)?.with_study(&self.study_id))
    }
}
