use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use chrono::{DateTime, Duration, Utc};
use thiserror::Error;
use tokio::sync::Mutex;
use visurvey_core::scheduler::{Deployment, DeploymentError};
use visurvey_core::sdl::{canonical_serialize, parse_study_definition, validate_study, AssetManifest, ParseError};
use visurvey_core::store::{open_sink, ResultSink, StoreError};
use visurvey_core::{
    derive_active_items, due_occurrences, ActiveItemSet, Clock, IdSource, Occurrence,
    ParticipantState, ResultEnvelope, StudyDefinition, SurveySession, TaskKind,
};

use crate::config::ServerConfig;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: ParseError,
    },
    #[error("study {study:?} has validation errors: {codes}")]
    InvalidStudy { study: String, codes: String },
    #[error("study {0:?} is loaded twice")]
    DuplicateStudy(String),
    #[error("{path}: {source}")]
    Deployment {
        path: PathBuf,
        #[source]
        source: DeploymentError,
    },
    #[error("deployment references study {0:?}, which is not loaded")]
    UnknownStudy(String),
    #[error("participant {0:?} is enrolled in more than one deployment")]
    DuplicateParticipant(String),
    #[error(transparent)]
    Sink(#[from] StoreError),
    #[error("environment variable {0} holding the API token is not set")]
    MissingToken(String),
    #[error("cannot listen on {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
}

pub(crate) struct LoadedStudy {
    pub def: StudyDefinition,
    pub canonical: Vec<u8>,
}

pub(crate) struct ParticipantRuntime {
    pub study_id: String,
    pub deployment: Arc<Deployment>,
    pub state: ParticipantState,
    /// Latest derived item set per spot assessment identifier.
    pub active: BTreeMap<String, ActiveItemSet>,
}

impl ParticipantRuntime {
    pub fn refresh(&mut self, now: DateTime<Utc>) -> Vec<Occurrence> {
        // Schedules are validated at load, so there is always a next instant.
        due_occurrences(&self.deployment.schedules, &mut self.state, now)
            .expect("validated schedules always recur")
    }

    /// The item set a spot session started now would use.
    pub fn effective_active(&self, spot_id: &str, now: DateTime<Utc>) -> ActiveItemSet {
        let set = self.active.get(spot_id).cloned().unwrap_or_default();
        self.deployment.activation.effective(&set, now)
    }

    /// Records a completed full assessment's item set.
    pub fn learn(&mut self, study: &StudyDefinition, envelope: &ResultEnvelope) {
        if envelope.task_kind != TaskKind::Full {
            return;
        }
        let Some(pair) = study
            .assessments
            .iter()
            .find(|p| p.full.identifier == envelope.assessment_id)
        else {
            return;
        };
        if let Ok(set) = derive_active_items(envelope, &pair.activation, &study.items) {
            self.active.insert(pair.spot.identifier.clone(), set);
        }
    }
}

pub(crate) struct SessionEntry {
    pub session: SurveySession,
    pub occurrence_id: String,
    pub study_id: String,
    pub ttl: Duration,
    pub envelope: Option<ResultEnvelope>,
    pub persisted: bool,
}

/// Everything the handlers share. Participants and sessions each sit behind
/// their own lock; a handler that needs both takes the participant first.
pub struct AppState {
    pub(crate) studies: BTreeMap<String, LoadedStudy>,
    pub(crate) participants: BTreeMap<String, Arc<Mutex<ParticipantRuntime>>>,
    pub(crate) sessions: RwLock<HashMap<String, Arc<Mutex<SessionEntry>>>>,
    /// Occurrence id → participant id, for routes keyed by occurrence alone.
    pub(crate) occurrence_owner: RwLock<HashMap<String, String>>,
    pub(crate) sink: Arc<dyn ResultSink>,
    pub(crate) clock: Arc<dyn Clock>,
    pub(crate) ids: Arc<dyn IdSource>,
    pub(crate) token: Option<String>,
    pub(crate) assets_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(
        studies: Vec<StudyDefinition>,
        deployments: Vec<Deployment>,
        sink: Arc<dyn ResultSink>,
        clock: Arc<dyn Clock>,
        ids: Arc<dyn IdSource>,
    ) -> Result<Self, LoadError> {
        let mut loaded = BTreeMap::new();
        for def in studies {
            let report = validate_study(&def, None::<&AssetManifest>);
            if !report.is_valid() {
                let codes = report
                    .diagnostics
                    .iter()
                    .filter(|d| d.severity == visurvey_core::sdl::Severity::Error)
                    .map(|d| d.code)
                    .collect::<Vec<_>>()
                    .join(", ");
                return Err(LoadError::InvalidStudy { study: def.study_id.clone(), codes });
            }
            let id = def.study_id.clone();
            let canonical = canonical_serialize(&def);
            if loaded.insert(id.clone(), LoadedStudy { def, canonical }).is_some() {
                return Err(LoadError::DuplicateStudy(id));
            }
        }
        let mut participants = BTreeMap::new();
        for d in deployments {
            let study = loaded
                .get(&d.study_id)
                .ok_or_else(|| LoadError::UnknownStudy(d.study_id.clone()))?;
            d.check_against(&study.def).map_err(|source| LoadError::Deployment {
                path: PathBuf::from(&d.study_id),
                source,
            })?;
            let d = Arc::new(d);
            for p in &d.participants {
                let rt = ParticipantRuntime {
                    study_id: d.study_id.clone(),
                    deployment: d.clone(),
                    state: ParticipantState::new(&p.participant_id, p.enrolled_at),
                    active: BTreeMap::new(),
                };
                if participants
                    .insert(p.participant_id.clone(), Arc::new(Mutex::new(rt)))
                    .is_some()
                {
                    return Err(LoadError::DuplicateParticipant(p.participant_id.clone()));
                }
            }
        }
        let state = AppState {
            studies: loaded,
            participants,
            sessions: RwLock::default(),
            occurrence_owner: RwLock::default(),
            sink,
            clock,
            ids,
            token: None,
            assets_dir: None,
        };
        state.recover_active_sets()?;
        Ok(state)
    }

    pub fn from_config(
        config: &ServerConfig,
        clock: Arc<dyn Clock>,
        ids: Arc<dyn IdSource>,
    ) -> Result<Self, LoadError> {
        let read = |path: &PathBuf| {
            std::fs::read(path).map_err(|source| LoadError::Io { path: path.clone(), source })
        };
        let mut studies = Vec::new();
        for path in &config.studies {
            let def = parse_study_definition(&read(path)?)
                .map_err(|source| LoadError::Parse { path: path.clone(), source })?;
            studies.push(def);
        }
        let mut deployments = Vec::new();
        for path in &config.deployments {
            let d = Deployment::from_json(&read(path)?)
                .map_err(|source| LoadError::Deployment { path: path.clone(), source })?;
            deployments.push(d);
        }
        let token = match &config.auth_token_env {
            Some(var) => Some(std::env::var(var).map_err(|_| LoadError::MissingToken(var.clone()))?),
            None => None,
        };
        let sink = open_sink(&config.sink, clock.clone())?;
        Ok(Self::new(studies, deployments, sink, clock, ids)?
            .with_token(token)
            .with_assets_dir(config.assets_dir.clone()))
    }

    /// Requires `Authorization: Bearer <token>` on every `/v1` route.
    pub fn with_token(mut self, token: Option<String>) -> Self {
        self.token = token;
        self
    }

    pub fn with_assets_dir(mut self, dir: Option<PathBuf>) -> Self {
        self.assets_dir = dir;
        self
    }

    /// Replays stored full-assessment envelopes so spot tasks keep their item
    /// sets across restarts. Sinks that cannot be read back are skipped.
    fn recover_active_sets(&self) -> Result<(), LoadError> {
        let mut stored = match self.sink.snapshot() {
            Ok(s) => s,
            Err(StoreError::Unreadable(_)) => return Ok(()),
            Err(e) => return Err(e.into()),
        };
        stored.sort_by(|a, b| (a.completed_at, &a.envelope_id).cmp(&(b.completed_at, &b.envelope_id)));
        for env in &stored {
            let Some(rt) = self.participants.get(&env.participant_id) else {
                continue;
            };
            let mut rt = rt.try_lock().expect("no contention during startup");
            if rt.study_id != env.study_id {
                continue;
            }
            let study = &self.studies[&rt.study_id].def;
            rt.learn(study, env);
        }
        Ok(())
    }

    pub(crate) fn index_occurrences(&self, rt: &ParticipantRuntime) {
        let mut owners = self.occurrence_owner.write().unwrap();
        for id in rt.state.occurrences.keys() {
            if !owners.contains_key(id) {
                owners.insert(id.clone(), rt.state.participant_id.clone());
            }
        }
    }

    pub(crate) fn session(&self, id: &str) -> Option<Arc<Mutex<SessionEntry>>> {
        self.sessions.read().unwrap().get(id).cloned()
    }
}
