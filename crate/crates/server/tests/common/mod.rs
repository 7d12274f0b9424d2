#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use chrono::{DateTime, Utc};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;
use visurvey_core::{ManualClock, SequentialIds};
use visurvey_server::{router, AppState, ServerConfig};

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

pub fn ts(s: &str) -> DateTime<Utc> {
    s.parse().unwrap()
}

pub struct Harness {
    pub app: Router,
    pub clock: Arc<ManualClock>,
}

#[derive(Debug, Clone)]
pub enum ReqBody {
    Json(Value),
    Raw(String),
}

#[derive(Debug, Clone)]
pub struct Reply {
    pub status: StatusCode,
    pub content_type: String,
    pub text: String,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_str(&self.text).unwrap_or_else(|e| panic!("{e}: {}", self.text))
    }
}

impl Harness {
    pub fn new(at: &str) -> Self {
        Self::with(at, |s| s)
    }

    pub fn with(at: &str, tweak: impl FnOnce(AppState) -> AppState) -> Self {
        let config = ServerConfig::load(&fixture_path("server.toml")).unwrap();
        let clock = Arc::new(ManualClock::new(ts(at)));
        let state = AppState::from_config(&config, clock.clone(), Arc::new(SequentialIds::new("api"))).unwrap();
        Harness { app: router(Arc::new(tweak(state))), clock }
    }

    pub async fn send(&self, method: &str, path: &str, body: Option<ReqBody>) -> Reply {
        self.send_with(method, path, body, None).await
    }

    pub async fn send_with(&self, method: &str, path: &str, body: Option<ReqBody>, bearer: Option<&str>) -> Reply {
        let mut req = Request::builder().method(method).uri(path);
        if let Some(token) = bearer {
            req = req.header("authorization", format!("Bearer {token}"));
        }
        let body = match body {
            Some(ReqBody::Json(v)) => {
                req = req.header("content-type", "application/json");
                Body::from(serde_json::to_vec(&v).unwrap())
            }
            Some(ReqBody::Raw(s)) => Body::from(s),
            None => Body::empty(),
        };
        let resp = self.app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
        let status = resp.status();
        let content_type = resp
            .headers()
            .get("content-type")
            .map(|v| v.to_str().unwrap().to_string())
            .unwrap_or_default();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        Reply { status, content_type, text: String::from_utf8_lossy(&bytes).into_owned() }
    }
}
