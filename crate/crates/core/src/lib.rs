//! Engine for visual self-report surveys.
//!
//! Study documents are parsed and validated by [`sdl`], turned into task
//! plans by [`compiler`], run as [`session`]s, scheduled by [`scheduler`]
//! and persisted through the sinks in [`store`].

pub mod clock;
pub mod compiler;
pub mod scheduler;
pub mod sdl;
pub mod session;
pub mod store;

pub use clock::{Clock, IdSource, ManualClock, RandomIds, SequentialIds, SystemClock};
pub use compiler::{
    compile_full_task, compile_pam_task, compile_spot_task, derive_active_items, ActiveItemSet,
    CompileError, Selection, Step, StepKind, TaskKind, TaskPlan,
};
pub use scheduler::{
    apply_snooze, due_occurrences, next_occurrence, Occurrence, OccurrenceState,
    ParticipantState, Recurrence, ReminderPolicy, ScheduleSpec, TaskRef,
};
pub use sdl::{
    canonical_serialize, parse_study_definition, validate_study, AssetManifest, StudyDefinition,
    ValidationReport,
};
pub use session::{start_session, Answer, ResultEnvelope, SessionStatus, StepResult, SurveySession};
