#![allow(dead_code)]

use std::path::PathBuf;

use chrono::{DateTime, Utc};
use visurvey_core::sdl::{parse_study_definition, StudyDefinition};

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

pub fn fixture_bytes(name: &str) -> Vec<u8> {
    std::fs::read(fixture_path(name)).unwrap()
}

pub fn yadl() -> StudyDefinition {
    parse_study_definition(&fixture_bytes("yadl.json")).unwrap()
}

pub fn ts(s: &str) -> DateTime<Utc> {
    s.parse().unwrap()
}

use visurvey_core::{
    Answer, ManualClock, ResultEnvelope, SequentialIds, SurveySession, TaskPlan,
};

pub fn clock() -> ManualClock {
    ManualClock::new(ts("2016-09-25T10:00:00Z"))
}

/// Answers each step in order (choice values for item steps, ack for
/// summaries) and returns the envelope.
pub fn run_plan(plan: TaskPlan, answers: &[Answer]) -> ResultEnvelope {
    let clock = clock();
    let ids = SequentialIds::new("test");
    let mut s = SurveySession::start(plan, "p1", &clock, &ids).unwrap();
    let mut answers = answers.iter();
    while let Some(step) = s.current_step() {
        let a = if step.is_summary() {
            Answer::Ack
        } else {
            answers.next().expect("enough answers").clone()
        };
        clock.advance(chrono::Duration::seconds(3));
        s.submit_answer(a, &clock).unwrap();
    }
    s.finalize().unwrap()
}

pub fn choice(v: &str) -> Answer {
    Answer::Choice { value: v.to_string() }
}
