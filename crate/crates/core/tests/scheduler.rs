mod common;

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Datelike, Duration, NaiveTime, Timelike, Utc, Weekday};
use chrono_tz::Tz;
use common::ts;
use proptest::prelude::*;
use visurvey_core::scheduler::{
    apply_snooze, due_occurrences, next_occurrence, resolve_local, Occurrence, OccurrenceState,
    ParticipantState, Recurrence, ReminderPolicy, ScheduleError, ScheduleSpec, SnoozeError,
    TaskRef,
};
use visurvey_core::TaskKind;

fn task(kind: TaskKind) -> TaskRef {
    let assessment = match kind {
        TaskKind::Full => "YADL Full Identifier",
        _ => "YADL Spot Identifier",
    };
    TaskRef { assessment: assessment.into(), kind }
}

fn spec(recurrence: Recurrence, anchor: &str, tz: &str) -> ScheduleSpec {
    ScheduleSpec::new(
        task(TaskKind::Spot),
        recurrence,
        NaiveTime::parse_from_str(anchor, "%H:%M").unwrap(),
        tz,
    )
    .unwrap()
}

/// Minute-by-minute enumeration: on each matching local date the schedule
/// fires at the first minute whose local time is at or past the anchor; an
/// interval schedule fires at every whole multiple of its interval after
/// the start.
fn oracle_fires(spec: &ScheduleSpec, from: DateTime<Utc>, to: DateTime<Utc>) -> Vec<DateTime<Utc>> {
    let tz: Tz = spec.timezone;
    let mut fired_dates = BTreeSet::new();
    let mut out = Vec::new();
    // Start mid-day and the first enumerated date would look like it fired
    // at its first minute; warm up for a day and drop those fires.
    let warm_up = from - Duration::days(1);
    let mut t = from - Duration::days(2);
    t = t.with_second(0).unwrap().with_nanosecond(0).unwrap();
    while t <= to {
        let fire = match spec.recurrence {
            Recurrence::Every { minutes } => {
                let base = spec.starts_at.expect("interval tests set a start");
                t >= base && (t - base).num_minutes() % minutes == 0
            }
            other => {
                let local = t.with_timezone(&tz);
                let date = local.date_naive();
                let matches = match other {
                    Recurrence::Daily => true,
                    Recurrence::Weekly { weekday } => date.weekday() == weekday,
                    Recurrence::Monthly { day } => date.day() == day,
                    Recurrence::Every { .. } => unreachable!(),
                };
                matches && local.time() >= spec.anchor_time && fired_dates.insert(date)
            }
        };
        if fire && t >= warm_up && spec.starts_at.is_none_or(|s| t >= s) {
            out.push(t);
        }
        t += Duration::minutes(1);
    }
    out
}

fn oracle_next(fires: &[DateTime<Utc>], after: DateTime<Utc>) -> DateTime<Utc> {
    *fires.iter().find(|f| **f > after).expect("oracle window too short")
}

#[test]
fn daily_example() {
    let s = spec(Recurrence::Daily, "09:00", "UTC");
    assert_eq!(
        next_occurrence(&s, ts("2016-09-25T10:00:00Z")).unwrap(),
        ts("2016-09-26T09:00:00Z")
    );
    let fires = oracle_fires(&s, ts("2016-09-20T00:00:00Z"), ts("2016-10-01T00:00:00Z"));
    assert_eq!(oracle_next(&fires, ts("2016-09-25T10:00:00Z")), ts("2016-09-26T09:00:00Z"));
}

#[test]
fn monthly_example() {
    let s = spec(Recurrence::Monthly { day: 1 }, "09:00", "UTC");
    assert_eq!(
        next_occurrence(&s, ts("2016-09-01T09:00:00Z")).unwrap(),
        ts("2016-10-01T09:00:00Z")
    );
    let fires = oracle_fires(&s, ts("2016-08-25T00:00:00Z"), ts("2016-10-05T00:00:00Z"));
    assert_eq!(oracle_next(&fires, ts("2016-09-01T09:00:00Z")), ts("2016-10-01T09:00:00Z"));
}

#[test]
fn interval_example() {
    let t = ts("2016-09-25T09:00:00Z");
    let s = spec(Recurrence::Every { minutes: 24 * 60 }, "00:00", "UTC").starting_at(t);
    assert_eq!(next_occurrence(&s, t).unwrap(), t + Duration::hours(24));
    assert_eq!(next_occurrence(&s, t - Duration::days(3)).unwrap(), t);
}

#[test]
fn dst_gap_rolls_forward() {
    let s = spec(Recurrence::Daily, "02:30", "America/New_York");
    // 2016-03-13 02:30 does not exist in New York; 03:00 EDT is 07:00Z.
    assert_eq!(
        next_occurrence(&s, ts("2016-03-12T12:00:00Z")).unwrap(),
        ts("2016-03-13T07:00:00Z")
    );
    assert_eq!(
        next_occurrence(&s, ts("2016-03-13T07:00:00Z")).unwrap(),
        ts("2016-03-14T06:30:00Z")
    );
}

#[test]
fn dst_fold_takes_earlier_instant() {
    let s = spec(Recurrence::Daily, "01:30", "America/New_York");
    // 01:30 happens twice on 2016-11-06: 05:30Z (EDT) and 06:30Z (EST).
    assert_eq!(
        next_occurrence(&s, ts("2016-11-05T12:00:00Z")).unwrap(),
        ts("2016-11-06T05:30:00Z")
    );
    assert_eq!(
        next_occurrence(&s, ts("2016-11-06T05:30:00Z")).unwrap(),
        ts("2016-11-07T06:30:00Z")
    );
}

#[test]
fn resolve_local_handles_gaps_and_folds() {
    let ny: Tz = "America/New_York".parse().unwrap();
    let gap = chrono::NaiveDate::from_ymd_opt(2016, 3, 13).unwrap().and_hms_opt(2, 0, 0).unwrap();
    assert_eq!(resolve_local(ny, gap), ts("2016-03-13T07:00:00Z"));
}

#[test]
fn invalid_specs() {
    assert_eq!(
        ScheduleSpec::new(task(TaskKind::Spot), Recurrence::Daily, NaiveTime::MIN, "Mars/Olympus"),
        Err(ScheduleError::InvalidTimezone("Mars/Olympus".into()))
    );
    for day in [0, 29, 31] {
        assert_eq!(
            ScheduleSpec::new(task(TaskKind::Full), Recurrence::Monthly { day }, NaiveTime::MIN, "UTC"),
            Err(ScheduleError::DayOfMonthOutOfRange(day))
        );
    }
    assert_eq!(
        ScheduleSpec::new(task(TaskKind::Spot), Recurrence::Every { minutes: 0 }, NaiveTime::MIN, "UTC"),
        Err(ScheduleError::NonPositiveInterval)
    );
    let s = spec(Recurrence::Daily, "09:00", "UTC").with_window(Duration::zero());
    assert_eq!(s.validate(), Err(ScheduleError::NonPositiveWindow));
}

#[test]
fn schedule_json_form() {
    let raw = r#"{"task":{"assessment":"YADL Spot Identifier","kind":"spot"},"recurrence":{"type":"weekly","weekday":"Mon"},"anchorTime":"08:15","timezone":"Europe/London","windowMinutes":720}"#;
    let s: ScheduleSpec = serde_json::from_str(raw).unwrap();
    assert_eq!(s.recurrence, Recurrence::Weekly { weekday: Weekday::Mon });
    assert_eq!(s.window, Duration::hours(12));
    assert_eq!(serde_json::to_string(&s).unwrap(), raw);

    let bad = raw.replace("\"Mon\"}", "\"Mon\"}").replace("weekly\",\"weekday\":\"Mon\"", "monthly\",\"day\":30");
    assert!(serde_json::from_str::<ScheduleSpec>(&bad).is_err());
}

fn oracle_specs() -> Vec<(ScheduleSpec, DateTime<Utc>)> {
    vec![
        (spec(Recurrence::Daily, "09:00", "UTC"), ts("2016-09-01T00:00:00Z")),
        (spec(Recurrence::Daily, "02:30", "America/New_York"), ts("2016-02-20T00:00:00Z")),
        (spec(Recurrence::Daily, "01:30", "America/New_York"), ts("2016-10-15T00:00:00Z")),
        (spec(Recurrence::Weekly { weekday: Weekday::Sun }, "02:15", "America/New_York"), ts("2016-02-20T00:00:00Z")),
        (spec(Recurrence::Weekly { weekday: Weekday::Wed }, "18:45", "Europe/London"), ts("2016-03-10T00:00:00Z")),
        (spec(Recurrence::Monthly { day: 1 }, "09:00", "UTC"), ts("2016-08-15T00:00:00Z")),
        (spec(Recurrence::Monthly { day: 13 }, "02:30", "America/New_York"), ts("2016-01-20T00:00:00Z")),
        (spec(Recurrence::Daily, "02:30", "Australia/Sydney"), ts("2016-09-15T00:00:00Z")),
        (
            spec(Recurrence::Every { minutes: 24 * 60 }, "00:00", "UTC").starting_at(ts("2016-09-25T09:00:00Z")),
            ts("2016-09-20T00:00:00Z"),
        ),
        (
            spec(Recurrence::Every { minutes: 97 }, "00:00", "America/New_York").starting_at(ts("2016-03-12T00:00:00Z")),
            ts("2016-03-01T00:00:00Z"),
        ),
        (
            spec(Recurrence::Daily, "07:00", "Europe/Berlin").starting_at(ts("2016-03-20T12:00:00Z")),
            ts("2016-03-10T00:00:00Z"),
        ),
    ]
}

#[test]
fn next_occurrence_matches_enumeration_oracle_over_sixty_days() {
    for (s, start) in oracle_specs() {
        let end = start + Duration::days(60);
        let fires = oracle_fires(&s, start, end + Duration::days(35));
        let mut queries: Vec<DateTime<Utc>> = Vec::new();
        for f in fires.iter().filter(|f| **f <= end) {
            queries.extend([*f, *f - Duration::minutes(1), *f + Duration::minutes(1), *f - Duration::milliseconds(1)]);
        }
        let mut t = start;
        while t < end {
            queries.push(t);
            t += Duration::minutes(137);
        }
        for q in queries {
            assert_eq!(
                next_occurrence(&s, q).unwrap(),
                oracle_next(&fires, q),
                "{:?} after {q}",
                s.recurrence
            );
        }
        // Iterating from the start reproduces the whole fire list.
        let mut seq = Vec::new();
        let mut t = start;
        loop {
            let n = next_occurrence(&s, t).unwrap();
            if n > end {
                break;
            }
            assert!(n > t);
            seq.push(n);
            t = n;
        }
        let expected: Vec<_> = fires.iter().copied().filter(|f| *f > start && *f <= end).collect();
        assert_eq!(seq, expected, "{:?} {}", s.recurrence, s.timezone);
    }
}

#[test]
fn nothing_due_before_first_occurrence() {
    let specs = [spec(Recurrence::Daily, "09:00", "UTC")];
    let mut p = ParticipantState::new("p1", ts("2016-09-25T10:00:00Z"));
    assert!(due_occurrences(&specs, &mut p, ts("2016-09-26T08:59:59Z")).unwrap().is_empty());
    let due = due_occurrences(&specs, &mut p, ts("2016-09-26T09:00:00Z")).unwrap();
    assert_eq!(due.len(), 1);
    assert_eq!(due[0].task.kind, TaskKind::Spot);
    assert_eq!(due[0].due_at, ts("2016-09-26T09:00:00Z"));
    assert_eq!(due[0].expires_at, ts("2016-09-27T09:00:00Z"));
}

#[test]
fn closed_window_expires_occurrence() {
    let specs = [spec(Recurrence::Daily, "09:00", "UTC").with_window(Duration::hours(12))];
    let mut p = ParticipantState::new("p1", ts("2016-09-25T00:00:00Z"));
    let due = due_occurrences(&specs, &mut p, ts("2016-09-25T09:30:00Z")).unwrap();
    assert_eq!(due.len(), 1);
    let id = due[0].occurrence_id.clone();
    assert!(due_occurrences(&specs, &mut p, ts("2016-09-25T22:00:00Z")).unwrap().is_empty());
    assert_eq!(p.occurrences[&id].state, OccurrenceState::Expired);
}

#[test]
fn occurrence_ids_are_stable() {
    let s = spec(Recurrence::Daily, "09:00", "UTC");
    let a = Occurrence::new("p1", &s, ts("2016-09-26T09:00:00Z"));
    let b = Occurrence::new("p1", &s, ts("2016-09-26T09:00:00Z"));
    let c = Occurrence::new("p2", &s, ts("2016-09-26T09:00:00Z"));
    assert_eq!(a.occurrence_id, b.occurrence_id);
    assert_ne!(a.occurrence_id, c.occurrence_id);
}

#[test]
fn thirty_day_timeline_matches_oracle() {
    let spot = spec(Recurrence::Daily, "09:00", "America/New_York").with_window(Duration::hours(12));
    let full = ScheduleSpec::new(
        task(TaskKind::Full),
        Recurrence::Monthly { day: 1 },
        NaiveTime::from_hms_opt(9, 0, 0).unwrap(),
        "America/New_York",
    )
    .unwrap()
    .with_window(Duration::hours(72));
    let specs = [spot.clone(), full.clone()];
    let enrolled = ts("2016-09-20T16:00:00Z");
    let end = enrolled + Duration::days(30);
    let fires: Vec<(DateTime<Utc>, TaskRef, Duration)> = [&spot, &full]
        .iter()
        .flat_map(|s| {
            oracle_fires(s, enrolled, end)
                .into_iter()
                .filter(|f| *f >= enrolled)
                .map(|f| (f, s.task.clone(), s.window))
                .collect::<Vec<_>>()
        })
        .collect();

    let mut p = ParticipantState::new("p1", enrolled);
    let mut completed: BTreeSet<(DateTime<Utc>, TaskRef)> = BTreeSet::new();
    let mut now = enrolled;
    let mut samples = 0;
    while now <= end {
        let got = due_occurrences(&specs, &mut p, now).unwrap();
        let mut expected: Vec<(DateTime<Utc>, TaskRef)> = fires
            .iter()
            .filter(|(f, t, w)| *f <= now && now < *f + *w && !completed.contains(&(*f, t.clone())))
            .map(|(f, t, _)| (*f, t.clone()))
            .collect();
        expected.sort();
        let got_keys: Vec<_> = got.iter().map(|o| (o.due_at, o.task.clone())).collect();
        assert_eq!(got_keys, expected, "at {now}");
        // Complete spot occurrences that fall on even days of the month.
        for o in got {
            if o.task.kind == TaskKind::Spot && o.due_at.day() % 2 == 0 {
                p.occurrences.get_mut(&o.occurrence_id).unwrap().complete("s");
                completed.insert((o.due_at, o.task));
            }
        }
        for o in p.occurrences.values() {
            assert!(o.state != OccurrenceState::Expired || now >= o.expires_at);
        }
        samples += 1;
        now += Duration::minutes(47);
    }
    assert!(samples > 900);
    assert!(completed.len() >= 14);
}

#[test]
fn snooze_examples() {
    let policy = ReminderPolicy::default();
    assert_eq!(policy.max_snoozes, 3);
    assert_eq!(policy.snooze_duration, Duration::minutes(30));
    let s = spec(Recurrence::Daily, "09:00", "UTC");
    let occ = Occurrence::new("p1", &s, ts("2016-09-26T09:00:00Z"));
    let now = ts("2016-09-26T09:05:00Z");
    let once = apply_snooze(&occ, now, &policy).unwrap();
    assert_eq!(once.snooze_count, 1);
    assert_eq!(once.state, OccurrenceState::Snoozed);
    assert_eq!(once.remind_at, now + Duration::minutes(30));

    let mut at_limit = once.clone();
    at_limit.snooze_count = 3;
    assert_eq!(apply_snooze(&at_limit, now, &policy), Err(SnoozeError::LimitReached(3)));

    let late = occ.expires_at - Duration::minutes(10);
    let clamped = apply_snooze(&occ, late, &policy).unwrap();
    assert_eq!(clamped.remind_at, occ.expires_at);

    assert_eq!(apply_snooze(&occ, occ.expires_at, &policy), Err(SnoozeError::Expired));
    let mut done = occ.clone();
    done.complete("s1");
    assert_eq!(apply_snooze(&done, now, &policy), Err(SnoozeError::Completed));
}

fn any_spec() -> impl Strategy<Value = ScheduleSpec> {
    let tz = prop::sample::select(vec!["UTC", "America/New_York", "Europe/London", "Australia/Sydney", "Asia/Kolkata"]);
    let rec = prop_oneof![
        Just(Recurrence::Daily),
        (0u8..7).prop_map(|d| Recurrence::Weekly { weekday: Weekday::try_from(d).unwrap() }),
        (1u32..=28).prop_map(|day| Recurrence::Monthly { day }),
        (1i64..5000).prop_map(|minutes| Recurrence::Every { minutes }),
    ];
    (rec, 0u32..24, 0u32..60, tz, prop::option::of(0i64..10_000_000)).prop_map(|(r, h, m, tz, start)| {
        let mut s = ScheduleSpec::new(
            TaskRef { assessment: "A".into(), kind: TaskKind::Spot },
            r,
            NaiveTime::from_hms_opt(h, m, 0).unwrap(),
            tz,
        )
        .unwrap();
        s.starts_at = start.map(|secs| ts("2016-01-01T00:00:00Z") + Duration::seconds(secs));
        s
    })
}

proptest! {
    #[test]
    fn next_is_strictly_later(s in any_spec(), offset in 0i64..200_000_000) {
        let mut t = ts("2015-06-01T00:00:00Z") + Duration::seconds(offset);
        let mut prev: Option<DateTime<Utc>> = None;
        for _ in 0..6 {
            let n = next_occurrence(&s, t).unwrap();
            prop_assert!(n > t);
            if let (Some(p), Recurrence::Every { minutes }) = (prev, s.recurrence) {
                prop_assert_eq!(n - p, Duration::minutes(minutes));
            }
            prev = Some(n);
            t = n;
        }
    }

    #[test]
    fn snooze_count_never_exceeds_limit(
        max in 0u32..5,
        snooze_min in 1i64..180,
        steps in prop::collection::vec(0i64..240, 0..20),
    ) {
        let policy = ReminderPolicy { snooze_duration: Duration::minutes(snooze_min), max_snoozes: max };
        let s = spec(Recurrence::Daily, "09:00", "UTC");
        let mut occ = Occurrence::new("p1", &s, ts("2016-09-26T09:00:00Z"));
        let mut now = occ.due_at;
        let mut history = BTreeMap::new();
        for (i, dt) in steps.into_iter().enumerate() {
            now += Duration::minutes(dt);
            match apply_snooze(&occ, now, &policy) {
                Ok(next) => {
                    prop_assert_eq!(next.snooze_count, occ.snooze_count + 1);
                    prop_assert!(next.remind_at <= next.expires_at);
                    occ = next;
                }
                Err(SnoozeError::LimitReached(_)) => prop_assert_eq!(occ.snooze_count, max),
                Err(SnoozeError::Expired) => prop_assert!(now >= occ.expires_at),
                Err(e) => prop_assert!(false, "{e}"),
            }
            prop_assert!(occ.snooze_count <= max);
            history.insert(i, occ.snooze_count);
        }
    }
}
