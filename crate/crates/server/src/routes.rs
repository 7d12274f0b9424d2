use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::rejection::QueryRejection;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, Method, StatusCode, Uri};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use visurvey_core::scheduler::SnoozeError;
use visurvey_core::session::SessionError;
use visurvey_core::store::{encode_record, export_results, ExportFilter, StoreError};
use visurvey_core::{apply_snooze, Answer, OccurrenceState, SessionStatus, SurveySession, TaskKind};

use crate::error::ApiError;
use crate::state::{AppState, ParticipantRuntime, SessionEntry};
use crate::wire::{OccurrenceView, SessionView, StepPayload};

type Shared = State<Arc<AppState>>;
type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    let v1 = Router::new()
        .route("/v1/studies/{id}", get(get_study))
        .route("/v1/participants/{id}/due", get(get_due))
        .route(
            "/v1/participants/{pid}/occurrences/{oid}/sessions",
            post(create_session),
        )
        .route("/v1/sessions/{id}/step", get(get_step))
        .route("/v1/sessions/{id}/answers", post(post_answer))
        .route("/v1/sessions/{id}/complete-ack", post(complete_ack))
        .route("/v1/occurrences/{id}/snooze", post(post_snooze))
        .route("/v1/export", get(export))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    Router::new()
        .merge(v1)
        .route("/assets/{name}", get(get_asset))
        .fallback(unknown_route)
        .method_not_allowed_fallback(wrong_method)
        .layer(middleware::from_fn(stamp_error_path))
        .with_state(state)
}

/// Re-renders [`ApiError`] bodies with the request path.
async fn stamp_error_path(req: Request, next: Next) -> Response {
    let path = req.uri().path().to_string();
    let mut resp = next.run(req).await;
    match resp.extensions_mut().remove::<ApiError>() {
        Some(mut err) => {
            err.path = path;
            (err.status(), Json(err)).into_response()
        }
        None => resp,
    }
}

async fn require_token(State(state): Shared, req: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == token);
        if !ok {
            return ApiError::new(StatusCode::UNAUTHORIZED, "UNAUTHORIZED", "missing or wrong bearer token")
                .into_response();
        }
    }
    next.run(req).await
}

async fn unknown_route(method: Method, uri: Uri) -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "NOT_FOUND", format!("no route for {method} {}", uri.path()))
}

async fn wrong_method(method: Method, uri: Uri) -> ApiError {
    ApiError::new(
        StatusCode::METHOD_NOT_ALLOWED,
        "METHOD_NOT_ALLOWED",
        format!("{method} is not supported on {}", uri.path()),
    )
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

fn json_bytes(status: StatusCode, bytes: Vec<u8>) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], bytes).into_response()
}

impl AppState {
    fn participant(&self, id: &str) -> ApiResult<Arc<tokio::sync::Mutex<ParticipantRuntime>>> {
        self.participants
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("PARTICIPANT_NOT_FOUND", "participant", id))
    }

    fn session_entry(&self, id: &str) -> ApiResult<Arc<tokio::sync::Mutex<SessionEntry>>> {
        self.session(id)
            .ok_or_else(|| ApiError::not_found("SESSION_NOT_FOUND", "session", id))
    }

    fn occurrence_view(&self, rt: &ParticipantRuntime, occ: visurvey_core::Occurrence) -> OccurrenceView {
        let spot_has_no_items = occ.task.kind == TaskKind::Spot
            && rt
                .effective_active(&occ.task.assessment, self.clock.now())
                .item_ids
                .is_empty();
        OccurrenceView { occurrence: occ, spot_has_no_items }
    }
}

async fn get_study(State(state): Shared, Path(id): Path<String>) -> ApiResult<Response> {
    let study = state
        .studies
        .get(&id)
        .ok_or_else(|| ApiError::not_found("STUDY_NOT_FOUND", "study", &id))?;
    Ok(json_bytes(StatusCode::OK, study.canonical.clone()))
}

async fn get_due(State(state): Shared, Path(id): Path<String>) -> ApiResult<Json<Vec<OccurrenceView>>> {
    let rt = state.participant(&id)?;
    let mut rt = rt.lock().await;
    let due = rt.refresh(state.clock.now());
    state.index_occurrences(&rt);
    Ok(Json(due.into_iter().map(|o| state.occurrence_view(&rt, o)).collect()))
}

async fn create_session(
    State(state): Shared,
    Path((pid, oid)): Path<(String, String)>,
) -> ApiResult<(StatusCode, Json<SessionView>)> {
    let rt = state.participant(&pid)?;
    let mut rt = rt.lock().await;
    let now = state.clock.now();
    rt.refresh(now);
    state.index_occurrences(&rt);
    let occ = rt
        .state
        .occurrences
        .get(&oid)
        .cloned()
        .ok_or_else(|| ApiError::not_found("OCCURRENCE_NOT_FOUND", "occurrence", &oid))?;
    match occ.state {
        OccurrenceState::Completed => return Err(occurrence_completed(&oid)),
        OccurrenceState::Expired => return Err(occurrence_expired(&oid)),
        OccurrenceState::Pending | OccurrenceState::Snoozed => {}
    }
    if let Some(entry) = occ.session_id.as_deref().and_then(|sid| state.session(sid)) {
        let mut e = entry.lock().await;
        let ttl = e.ttl;
        e.session.abandon_if_stale(now, ttl);
        match e.session.status() {
            SessionStatus::InProgress => {
                return Err(ApiError::new(
                    StatusCode::CONFLICT,
                    "SESSION_IN_FLIGHT",
                    format!("occurrence {oid:?} already has session {:?} in progress", e.session.session_id()),
                ))
            }
            SessionStatus::Completed => return Err(occurrence_completed(&oid)),
            // An abandoned session frees its occurrence.
            SessionStatus::Abandoned => {}
        }
    }

    let study = &state.studies[&rt.study_id].def;
    let pair = study
        .pair(&occ.task.assessment)
        .ok_or_else(|| ApiError::internal(format!("assessment {:?} vanished", occ.task.assessment)))?;
    let plan = match occ.task.kind {
        TaskKind::Full => study.compile_full(pair),
        TaskKind::Spot => study.compile_spot(pair, &rt.effective_active(&occ.task.assessment, now)),
        TaskKind::Pam => return Err(ApiError::internal("pam tasks cannot be scheduled")),
    }
    .map_err(|e| ApiError::internal(e.to_string()))?;
    let session = SurveySession::start(plan, &pid, &*state.clock, &*state.ids)
        .map_err(|e| ApiError::internal(e.to_string()))?;
    let sid = session.session_id().to_string();
    if let Some(o) = rt.state.occurrences.get_mut(&oid) {
        o.session_id = Some(sid.clone());
    }
    let entry = SessionEntry {
        session,
        occurrence_id: oid,
        study_id: rt.study_id.clone(),
        ttl: rt.deployment.session_ttl,
        envelope: None,
        persisted: false,
    };
    let view = session_view(&entry);
    state
        .sessions
        .write()
        .unwrap()
        .insert(sid, Arc::new(tokio::sync::Mutex::new(entry)));
    Ok((StatusCode::CREATED, Json(view)))
}

fn occurrence_completed(oid: &str) -> ApiError {
    ApiError::new(StatusCode::CONFLICT, "OCCURRENCE_COMPLETED", format!("occurrence {oid:?} is already completed"))
}

fn occurrence_expired(oid: &str) -> ApiError {
    ApiError::new(StatusCode::GONE, "OCCURRENCE_EXPIRED", format!("occurrence {oid:?} has expired"))
}

fn session_view(e: &SessionEntry) -> SessionView {
    let s = &e.session;
    let plan = s.plan();
    SessionView {
        session_id: s.session_id().to_string(),
        occurrence_id: e.occurrence_id.clone(),
        participant_id: s.participant_id().to_string(),
        study_id: e.study_id.clone(),
        assessment_id: plan.plan_id.clone(),
        task_kind: plan.task_kind,
        status: s.status(),
        cursor: s.cursor(),
        step_count: plan.len(),
        step: s.current_step().map(|step| StepPayload {
            index: s.cursor(),
            step: step.clone(),
        }),
        answers: s
            .answers()
            .iter()
            .map(|(id, r)| (id.clone(), r.answer.clone()))
            .collect(),
        envelope_id: e.envelope.as_ref().map(|env| env.envelope_id.clone()),
    }
}

async fn get_step(State(state): Shared, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    let entry = state.session_entry(&id)?;
    let mut e = entry.lock().await;
    let ttl = e.ttl;
    e.session.abandon_if_stale(state.clock.now(), ttl);
    Ok(Json(session_view(&e)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnswerRequest {
    #[serde(default)]
    answer: Option<Answer>,
    #[serde(default)]
    back: bool,
}

enum Action {
    Submit(Answer),
    Back,
    /// Acknowledge the summary if the session is at one, then make sure a
    /// completed session's envelope is stored.
    Ack,
}

async fn post_answer(State(state): Shared, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<SessionView>> {
    let req: AnswerRequest = parse_body(&body)?;
    let action = match (req.answer, req.back) {
        (Some(a), false) => Action::Submit(a),
        (None, true) => Action::Back,
        _ => return Err(ApiError::bad_request("send exactly one of \"answer\" or \"back\": true")),
    };
    advance(&state, &id, action).await.map(Json)
}

async fn complete_ack(State(state): Shared, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    advance(&state, &id, Action::Ack).await.map(Json)
}

async fn advance(state: &AppState, id: &str, action: Action) -> ApiResult<SessionView> {
    let entry = state.session_entry(id)?;
    let mut e = entry.lock().await;
    let ttl = e.ttl;
    e.session.abandon_if_stale(state.clock.now(), ttl);
    let clock = &*state.clock;
    let outcome = match action {
        Action::Submit(answer) => e.session.submit_answer(answer, clock),
        Action::Back => e.session.go_back(clock),
        Action::Ack => match e.session.status() {
            SessionStatus::InProgress if e.session.current_step().is_some_and(|s| s.is_summary()) => {
                e.session.submit_answer(Answer::Ack, clock)
            }
            SessionStatus::InProgress => {
                return Err(ApiError::new(
                    StatusCode::UNPROCESSABLE_ENTITY,
                    "NOT_AT_SUMMARY",
                    format!("session {id:?} is not at a summary step"),
                ))
            }
            SessionStatus::Completed => Ok(()),
            status => Err(SessionError::NotInProgress(status)),
        },
    };
    outcome.map_err(session_error)?;
    if e.session.status() != SessionStatus::Completed || e.persisted {
        return Ok(session_view(&e));
    }

    let envelope = match &e.envelope {
        Some(env) => env.clone(),
        None => {
            let env = e.session.finalize().map_err(session_error)?;
            e.envelope = Some(env.clone());
            env
        }
    };
    let sink = state.sink.clone();
    let to_store = envelope.clone();
    let stored = tokio::task::spawn_blocking(move || sink.append(&to_store))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?;
    match stored {
        // Parked in the outbox still counts: the envelope is never dropped.
        Ok(_) | Err(StoreError::Outboxed { .. }) => e.persisted = true,
        Err(err) => {
            return Err(ApiError::new(
                StatusCode::SERVICE_UNAVAILABLE,
                "SINK_UNAVAILABLE",
                format!("session completed but its result could not be stored ({err}); retry complete-ack"),
            ))
        }
    }
    let view = session_view(&e);
    let occurrence_id = e.occurrence_id.clone();
    drop(e);

    let rt = state.participant(&envelope.participant_id)?;
    let mut rt = rt.lock().await;
    if let Some(occ) = rt.state.occurrences.get_mut(&occurrence_id) {
        occ.complete(&envelope.session_id);
    }
    let study = &state.studies[&rt.study_id].def;
    rt.learn(study, &envelope);
    Ok(view)
}

fn session_error(e: SessionError) -> ApiError {
    let (status, code) = match &e {
        SessionError::AnswerMismatch { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "ANSWER_MISMATCH"),
        SessionError::AtFirstStep => (StatusCode::UNPROCESSABLE_ENTITY, "AT_FIRST_STEP"),
        SessionError::NotInProgress(_) | SessionError::NotCompleted(_) => {
            (StatusCode::CONFLICT, "SESSION_NOT_IN_PROGRESS")
        }
        SessionError::EmptyPlan => (StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL"),
    };
    ApiError::new(status, code, e.to_string())
}

async fn post_snooze(State(state): Shared, Path(id): Path<String>) -> ApiResult<Json<OccurrenceView>> {
    let owner = state.occurrence_owner.read().unwrap().get(&id).cloned();
    let pid = match owner {
        Some(pid) => pid,
        None => {
            // Not listed yet: materialize everyone's due occurrences once.
            let now = state.clock.now();
            for rt in state.participants.values() {
                let mut rt = rt.lock().await;
                rt.refresh(now);
                state.index_occurrences(&rt);
            }
            state
                .occurrence_owner
                .read()
                .unwrap()
                .get(&id)
                .cloned()
                .ok_or_else(|| ApiError::not_found("OCCURRENCE_NOT_FOUND", "occurrence", &id))?
        }
    };
    let rt = state.participant(&pid)?;
    let mut rt = rt.lock().await;
    let now = state.clock.now();
    rt.refresh(now);
    let occ = rt
        .state
        .occurrences
        .get(&id)
        .ok_or_else(|| ApiError::not_found("OCCURRENCE_NOT_FOUND", "occurrence", &id))?;
    let next = apply_snooze(occ, now, &rt.deployment.reminders).map_err(|e| match e {
        SnoozeError::LimitReached(n) => ApiError::new(
            StatusCode::CONFLICT,
            "SNOOZE_LIMIT",
            format!("occurrence {id:?} has already been snoozed {n} times"),
        ),
        SnoozeError::Expired => occurrence_expired(&id),
        SnoozeError::Completed => occurrence_completed(&id),
    })?;
    rt.state.occurrences.insert(id, next.clone());
    Ok(Json(state.occurrence_view(&rt, next)))
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct ExportQuery {
    study_id: Option<String>,
    participant_id: Option<String>,
    from: Option<String>,
    to: Option<String>,
}

fn parse_time(name: &str, value: Option<String>) -> ApiResult<Option<DateTime<Utc>>> {
    value
        .map(|v| {
            DateTime::parse_from_rfc3339(&v)
                .map(|t| t.with_timezone(&Utc))
                .map_err(|e| ApiError::bad_request(format!("{name}: {e}")))
        })
        .transpose()
}

/// Stored envelopes as newline-delimited records.
async fn export(State(state): Shared, query: Result<Query<ExportQuery>, QueryRejection>) -> ApiResult<Response> {
    let Query(q) = query.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let filter = ExportFilter {
        from: parse_time("from", q.from)?,
        to: parse_time("to", q.to)?,
        study_id: q.study_id,
        participant_id: q.participant_id,
    };
    let sink = state.sink.clone();
    let records = tokio::task::spawn_blocking(move || export_results(&*sink, &filter))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(|e| match e {
            StoreError::Unreadable(_) => ApiError::new(StatusCode::NOT_IMPLEMENTED, "EXPORT_UNSUPPORTED", e.to_string()),
            other => ApiError::internal(other.to_string()),
        })?;
    let mut body = String::new();
    for env in &records {
        body.push_str(&encode_record(env));
        body.push('\n');
    }
    Ok((StatusCode::OK, [(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

/// Serves the image whose file stem is `name` from the assets directory.
async fn get_asset(State(state): Shared, Path(name): Path<String>) -> ApiResult<Response> {
    let missing = || ApiError::not_found("ASSET_NOT_FOUND", "asset", &name);
    let dir = state.assets_dir.as_ref().ok_or_else(missing)?;
    let mut entries = tokio::fs::read_dir(dir).await.map_err(|_| missing())?;
    while let Ok(Some(entry)) = entries.next_entry().await {
        let path = entry.path();
        if path.file_stem().and_then(|s| s.to_str()) != Some(name.as_str()) {
            continue;
        }
        let bytes = tokio::fs::read(&path).await.map_err(|_| missing())?;
        let mime = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("png") => "image/png",
            Some("jpg" | "jpeg") => "image/jpeg",
            Some("gif") => "image/gif",
            Some("svg") => "image/svg+xml",
            Some("webp") => "image/webp",
            _ => "application/octet-stream",
        };
        return Ok((StatusCode::OK, [(header::CONTENT_TYPE, mime)], Body::from(bytes)).into_response());
    }
    Err(missing())
}
