//! Recurring schedules, due occurrences and snoozable reminders.
//!
//! Recurrence is evaluated in the schedule's IANA zone. A local anchor time
//! that falls in a DST gap resolves to the first valid instant after the gap;
//! an anchor repeated by a DST fold resolves to its earlier instant.

mod deployment;

use std::collections::BTreeMap;

use chrono::{DateTime, Datelike, Duration, LocalResult, NaiveDate, NaiveDateTime, NaiveTime, TimeZone, Utc, Weekday};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use crate::clock::millis;
use crate::compiler::{ActiveItemSet, TaskKind};

pub use deployment::{Deployment, EnrolledParticipant, DeploymentError};

pub const DEFAULT_WINDOW: Duration = Duration::hours(24);
pub const DEFAULT_SNOOZE: Duration = Duration::minutes(30);
pub const DEFAULT_MAX_SNOOZES: u32 = 3;

const OCCURRENCE_NAMESPACE: Uuid = Uuid::from_u128(0x8a4f_02d6_1c3b_4f9e_a7d5_60e2_9b18_3c47);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScheduleError {
    #[error("unknown time zone {0:?}")]
    InvalidTimezone(String),
    #[error("interval must be positive")]
    NonPositiveInterval,
    #[error("day of month {0} outside 1..=28")]
    DayOfMonthOutOfRange(u32),
    #[error("window must be positive")]
    NonPositiveWindow,
    #[error("no occurrence found")]
    NoOccurrence,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SnoozeError {
    #[error("snooze limit of {0} reached")]
    LimitReached(u32),
    #[error("occurrence has expired")]
    Expired,
    #[error("occurrence is already completed")]
    Completed,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaskRef {
    pub assessment: String,
    pub kind: TaskKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Recurrence {
    Daily,
    Weekly { weekday: Weekday },
    Monthly { day: u32 },
    Every { minutes: i64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSchedule", into = "RawSchedule")]
pub struct ScheduleSpec {
    pub task: TaskRef,
    pub recurrence: Recurrence,
    pub anchor_time: NaiveTime,
    pub timezone: Tz,
    pub window: Duration,
    /// No occurrence is produced before this instant. For `every` schedules
    /// it is also the first occurrence.
    pub starts_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawSchedule {
    task: TaskRef,
    recurrence: Recurrence,
    anchor_time: String,
    timezone: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    window_minutes: Option<i64>,
    #[serde(default, with = "millis::option", skip_serializing_if = "Option::is_none")]
    starts_at: Option<DateTime<Utc>>,
}

impl TryFrom<RawSchedule> for ScheduleSpec {
    type Error = String;

    fn try_from(raw: RawSchedule) -> Result<Self, Self::Error> {
        let anchor_time = NaiveTime::parse_from_str(&raw.anchor_time, "%H:%M")
            .or_else(|_| NaiveTime::parse_from_str(&raw.anchor_time, "%H:%M:%S"))
            .map_err(|e| format!("bad anchorTime {:?}: {e}", raw.anchor_time))?;
        let spec = ScheduleSpec {
            task: raw.task,
            recurrence: raw.recurrence,
            anchor_time,
            timezone: parse_tz(&raw.timezone).map_err(|e| e.to_string())?,
            window: raw.window_minutes.map(Duration::minutes).unwrap_or(DEFAULT_WINDOW),
            starts_at: raw.starts_at,
        };
        spec.validate().map_err(|e| e.to_string())?;
        Ok(spec)
    }
}

impl From<ScheduleSpec> for RawSchedule {
    fn from(s: ScheduleSpec) -> Self {
        RawSchedule {
            task: s.task,
            recurrence: s.recurrence,
            anchor_time: s.anchor_time.format("%H:%M").to_string(),
            timezone: s.timezone.name().to_string(),
            window_minutes: Some(s.window.num_minutes()),
            starts_at: s.starts_at,
        }
    }
}

pub fn parse_tz(name: &str) -> Result<Tz, ScheduleError> {
    name.parse::<Tz>()
        .map_err(|_| ScheduleError::InvalidTimezone(name.to_string()))
}

impl ScheduleSpec {
    pub fn new(task: TaskRef, recurrence: Recurrence, anchor_time: NaiveTime, timezone: &str) -> Result<Self, ScheduleError> {
        let spec = ScheduleSpec {
            task,
            recurrence,
            anchor_time,
            timezone: parse_tz(timezone)?,
            window: DEFAULT_WINDOW,
            starts_at: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_window(mut self, window: Duration) -> Self {
        self.window = window;
        self
    }

    pub fn starting_at(mut self, t: DateTime<Utc>) -> Self {
        self.starts_at = Some(t);
        self
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        match self.recurrence {
            Recurrence::Every { minutes } if minutes <= 0 => return Err(ScheduleError::NonPositiveInterval),
            Recurrence::Monthly { day } if !(1..=28).contains(&day) => {
                return Err(ScheduleError::DayOfMonthOutOfRange(day))
            }
            _ => {}
        }
        if self.window <= Duration::zero() {
            return Err(ScheduleError::NonPositiveWindow);
        }
        Ok(())
    }

    fn matches_date(&self, date: NaiveDate) -> bool {
        match self.recurrence {
            Recurrence::Daily => true,
            Recurrence::Weekly { weekday } => date.weekday() == weekday,
            Recurrence::Monthly { day } => date.day() == day,
            Recurrence::Every { .. } => false,
        }
    }
}

/// Maps a local wall-clock time to an instant, rolling forward out of DST
/// gaps and taking the earlier instant in DST folds.
pub fn resolve_local(tz: Tz, local: NaiveDateTime) -> DateTime<Utc> {
    let mut probe = local;
    // Gaps are at most a few hours wide.
    for _ in 0..=(24 * 60) {
        match tz.from_local_datetime(&probe) {
            LocalResult::Single(t) => return t.with_timezone(&Utc),
            LocalResult::Ambiguous(a, b) => return a.min(b).with_timezone(&Utc),
            LocalResult::None => probe += Duration::minutes(1),
        }
    }
    unreachable!("no valid local time within a day of {local}")
}

/// The earliest occurrence strictly after `after`.
pub fn next_occurrence(spec: &ScheduleSpec, after: DateTime<Utc>) -> Result<DateTime<Utc>, ScheduleError> {
    spec.validate()?;
    let tz = spec.timezone;
    let floor = spec.starts_at;

    if let Recurrence::Every { minutes } = spec.recurrence {
        let step = Duration::minutes(minutes);
        let base = floor.unwrap_or_else(|| {
            let epoch = NaiveDate::from_ymd_opt(1970, 1, 1).unwrap();
            resolve_local(tz, epoch.and_time(spec.anchor_time))
        });
        if after < base {
            return Ok(base);
        }
        let elapsed = (after - base).num_milliseconds();
        let k = elapsed / step.num_milliseconds() + 1;
        return Ok(base + Duration::milliseconds(k * step.num_milliseconds()));
    }

    let start = after.max(floor.unwrap_or(after));
    let mut date = start.with_timezone(&tz).date_naive() - Duration::days(1);
    // Monthly schedules match at least once every 31 days.
    for _ in 0..40 {
        if spec.matches_date(date) {
            let t = resolve_local(tz, date.and_time(spec.anchor_time));
            if t > after && floor.is_none_or(|f| t >= f) {
                return Ok(t);
            }
        }
        date = date.succ_opt().ok_or(ScheduleError::NoOccurrence)?;
    }
    Err(ScheduleError::NoOccurrence)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ReminderPolicy {
    #[serde(rename = "snoozeMinutes", with = "minutes")]
    pub snooze_duration: Duration,
    pub max_snoozes: u32,
}

impl Default for ReminderPolicy {
    fn default() -> Self {
        ReminderPolicy {
            snooze_duration: DEFAULT_SNOOZE,
            max_snoozes: DEFAULT_MAX_SNOOZES,
        }
    }
}

/// How long an active item set stays usable for spot tasks. `None` means it
/// never goes stale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ActivationPolicy {
    #[serde(rename = "maxAgeMinutes", default, with = "minutes::option", skip_serializing_if = "Option::is_none")]
    pub max_age: Option<Duration>,
}

impl ActivationPolicy {
    /// The set to use at `now`: stale sets are treated as empty.
    pub fn effective(&self, set: &ActiveItemSet, now: DateTime<Utc>) -> ActiveItemSet {
        match (self.max_age, set.derived_at) {
            (Some(max_age), Some(at)) if now - at > max_age => ActiveItemSet::empty(),
            _ => set.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OccurrenceState {
    Pending,
    Snoozed,
    Completed,
    Expired,
}

impl OccurrenceState {
    pub fn is_open(self) -> bool {
        matches!(self, OccurrenceState::Pending | OccurrenceState::Snoozed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Occurrence {
    pub occurrence_id: String,
    pub participant_id: String,
    pub task: TaskRef,
    #[serde(with = "millis")]
    pub due_at: DateTime<Utc>,
    #[serde(with = "millis")]
    pub expires_at: DateTime<Utc>,
    /// When the participant should next be reminded.
    #[serde(with = "millis")]
    pub remind_at: DateTime<Utc>,
    pub snooze_count: u32,
    pub state: OccurrenceState,
    /// Session started for this occurrence, kept after completion for audit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
}

impl Occurrence {
    pub fn new(participant_id: &str, spec: &ScheduleSpec, due_at: DateTime<Utc>) -> Self {
        let key = format!(
            "{participant_id}\u{1f}{}\u{1f}{}\u{1f}{}",
            spec.task.assessment,
            spec.task.kind.as_str(),
            millis::format(&due_at)
        );
        Occurrence {
            occurrence_id: Uuid::new_v5(&OCCURRENCE_NAMESPACE, key.as_bytes()).to_string(),
            participant_id: participant_id.to_string(),
            task: spec.task.clone(),
            due_at,
            expires_at: due_at + spec.window,
            remind_at: due_at,
            snooze_count: 0,
            state: OccurrenceState::Pending,
            session_id: None,
        }
    }

    /// Moves an open occurrence to `expired` once its window has closed.
    pub fn expire_if_closed(&mut self, now: DateTime<Utc>) -> bool {
        if self.state.is_open() && now >= self.expires_at {
            self.state = OccurrenceState::Expired;
            true
        } else {
            false
        }
    }

    pub fn complete(&mut self, session_id: &str) {
        self.state = OccurrenceState::Completed;
        self.session_id = Some(session_id.to_string());
    }
}

/// Per-participant occurrence bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParticipantState {
    pub participant_id: String,
    pub enrolled_at: DateTime<Utc>,
    pub occurrences: BTreeMap<String, Occurrence>,
}

impl ParticipantState {
    pub fn new(participant_id: &str, enrolled_at: DateTime<Utc>) -> Self {
        ParticipantState {
            participant_id: participant_id.to_string(),
            enrolled_at,
            occurrences: BTreeMap::new(),
        }
    }
}

/// Open occurrences at `now`, ordered by due time then task. Occurrences
/// whose window closed are marked expired in `state`.
pub fn due_occurrences(
    specs: &[ScheduleSpec],
    state: &mut ParticipantState,
    now: DateTime<Utc>,
) -> Result<Vec<Occurrence>, ScheduleError> {
    for occ in state.occurrences.values_mut() {
        occ.expire_if_closed(now);
    }
    for spec in specs {
        let mut cursor = (state.enrolled_at - Duration::milliseconds(1)).max(now - spec.window);
        loop {
            let due = next_occurrence(spec, cursor)?;
            if due > now {
                break;
            }
            let occ = Occurrence::new(&state.participant_id, spec, due);
            state
                .occurrences
                .entry(occ.occurrence_id.clone())
                .or_insert(occ);
            cursor = due;
        }
    }
    let mut due: Vec<Occurrence> = state
        .occurrences
        .values()
        .filter(|o| o.state.is_open() && o.due_at <= now && now < o.expires_at)
        .cloned()
        .collect();
    due.sort_by(|a, b| (a.due_at, &a.task).cmp(&(b.due_at, &b.task)));
    Ok(due)
}

pub fn apply_snooze(
    occ: &Occurrence,
    now: DateTime<Utc>,
    policy: &ReminderPolicy,
) -> Result<Occurrence, SnoozeError> {
    match occ.state {
        OccurrenceState::Completed => return Err(SnoozeError::Completed),
        OccurrenceState::Expired => return Err(SnoozeError::Expired),
        _ if now >= occ.expires_at => return Err(SnoozeError::Expired),
        _ => {}
    }
    if occ.snooze_count >= policy.max_snoozes {
        return Err(SnoozeError::LimitReached(policy.max_snoozes));
    }
    let mut next = occ.clone();
    next.remind_at = (now + policy.snooze_duration).min(occ.expires_at);
    next.snooze_count += 1;
    next.state = OccurrenceState::Snoozed;
    Ok(next)
}

mod minutes {
    use chrono::Duration;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_i64(d.num_minutes())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::minutes(i64::deserialize(d)?))
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(d: &Option<Duration>, s: S) -> Result<S::Ok, S::Error> {
            match d {
                Some(d) => s.serialize_some(&d.num_minutes()),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Duration>, D::Error> {
            Ok(Option::<i64>::deserialize(d)?.map(Duration::minutes))
        }
    }
}
