//! HTTP client for the annotation service and the noise-tuning driver.

use std::time::{Duration, Instant};

use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use super::service::{ClientConfig, CreateBatch, ErrorBody, NextTask};
use super::*;
use crate::noiser::{self, Decrement, NoiseConfig, TuningState};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("http: {0}")]
    Http(#[from] reqwest::Error),
    #[error("service returned {status}: {code}: {message}")]
    Api {
        status: u16,
        code: String,
        message: String,
    },
    #[error(transparent)]
    Noise(#[from] noiser::NoiseError),
    #[error("timed out waiting for ratings on batch `{0}`")]
    Timeout(String),
    #[error("no convergence after {0} rounds")]
    MaxRounds(u32),
}

pub type ClientResult<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct AnnotationClient {
    http: reqwest::Client,
    base: String,
}

impl AnnotationClient {
    /// `base` like `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Self {
            http: reqwest::Client::new(),
            base: base.into().trim_end_matches('/').to_string(),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn decode<T: DeserializeOwned>(resp: reqwest::Response) -> ClientResult<T> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json().await?);
        }
        let text = resp.text().await?;
        let body: ErrorBody = serde_json::from_str(&text).unwrap_or(ErrorBody {
            code: "unknown".into(),
            message: text,
        });
        Err(ClientError::Api {
            status: status.as_u16(),
            code: body.code,
            message: body.message,
        })
    }

    async fn get<T: DeserializeOwned>(&self, path: &str, query: &[(&str, &str)]) -> ClientResult<T> {
        Self::decode(self.http.get(self.url(path)).query(query).send().await?).await
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> ClientResult<T> {
        Self::decode(self.http.post(self.url(path)).json(body).send().await?).await
    }

    pub async fn config(&self) -> ClientResult<ClientConfig> {
        self.get("/config", &[]).await
    }

    pub async fn create_batch(
        &self,
        kind: TaskKind,
        items: &[TaskPayload],
        key: Option<&str>,
    ) -> ClientResult<BatchReceipt> {
        let body = CreateBatch {
            kind,
            items: items.iter().map(|i| serde_json::to_value(i).expect("payload")).collect(),
            key: key.map(str::to_string),
        };
        self.post("/batches", &body).await
    }

    pub async fn batch(&self, key: &str) -> ClientResult<BatchInfo> {
        self.get(&format!("/batches/{key}"), &[]).await
    }

    pub async fn close_batch(&self, key: &str) -> ClientResult<BatchInfo> {
        self.post(&format!("/batches/{key}/close"), &serde_json::json!({})).await
    }

    pub async fn next_task(&self, kind: TaskKind, annotator: &str) -> ClientResult<Option<AnnotationTask>> {
        let kind = kind.to_string();
        let r: NextTask = self
            .get("/tasks/next", &[("kind", kind.as_str()), ("annotator", annotator)])
            .await?;
        Ok(r.task)
    }

    pub async fn submit(&self, verdict: &VerdictRequest) -> ClientResult<VerdictReceipt> {
        self.post("/verdicts", verdict).await
    }

    pub async fn quality_report(&self, subset: Option<Subset>, language: Option<&str>) -> ClientResult<QualityReport> {
        let subset = subset.map(|s| s.to_string());
        let mut q: Vec<(&str, &str)> = Vec::new();
        if let Some(s) = &subset {
            q.push(("subset", s));
        }
        if let Some(l) = language {
            q.push(("language", l));
        }
        self.get("/reports/quality", &q).await
    }

    /// `None` while some task of the batch is still unanswered.
    pub async fn naturalness_report(&self, batch: &str) -> ClientResult<Option<NaturalnessReport>> {
        match self.get("/reports/naturalness", &[("batch", batch)]).await {
            Ok(r) => Ok(Some(r)),
            Err(ClientError::Api { status, code, .. })
                if status == StatusCode::CONFLICT.as_u16() && code == "incomplete_batch" =>
            {
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneOptions {
    pub seed: u64,
    pub start: f64,
    pub sample_size: usize,
    pub target_mean: f64,
    pub decrement: Decrement,
    pub poll_interval: Duration,
    /// Per-round wait for ratings; `None` waits forever.
    pub round_timeout: Option<Duration>,
    pub max_rounds: u32,
    /// Batch keys are `{key_prefix}-r{round}`.
    pub key_prefix: String,
}

impl Default for TuneOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            start: noiser::TUNING_START_PROBABILITY,
            sample_size: noiser::DEFAULT_SAMPLE_SIZE,
            target_mean: noiser::DEFAULT_TARGET_MEAN,
            decrement: Decrement::Uniform(noiser::DEFAULT_DECREMENT),
            poll_interval: Duration::from_millis(500),
            round_timeout: None,
            max_rounds: 10,
            key_prefix: "tune".into(),
        }
    }
}

/// Runs rating rounds through the service until the mean rating reaches the
/// target: each round posts a naturalness batch of freshly noised sentences,
/// waits for it to be fully rated, closes it and lowers the probabilities.
pub async fn tune_noise(
    client: &AnnotationClient,
    pool: &[String],
    opts: &TuneOptions,
    mut on_round: impl FnMut(&TuningState),
) -> ClientResult<TuningState> {
    let config = NoiseConfig::new(opts.start, opts.start, opts.start, true, opts.seed)?;
    let mut state = TuningState::start(config, pool, opts.sample_size, opts.target_mean, opts.decrement)?;
    loop {
        if state.round >= opts.max_rounds {
            return Err(ClientError::MaxRounds(opts.max_rounds));
        }
        let key = format!("{}-r{}", opts.key_prefix, state.round);
        let items: Vec<TaskPayload> = state
            .sample
            .iter()
            .map(|(o, c)| TaskPayload::naturalness(o.clone(), c.clone()))
            .collect();
        client.create_batch(TaskKind::Naturalness, &items, Some(&key)).await?;
        let started = Instant::now();
        let report = loop {
            if let Some(r) = client.naturalness_report(&key).await? {
                break r;
            }
            if opts.round_timeout.is_some_and(|t| started.elapsed() > t) {
                return Err(ClientError::Timeout(key));
            }
            tokio::time::sleep(opts.poll_interval).await;
        };
        client.close_batch(&key).await?;
        state = noiser::tune_probabilities(&state, &report.ratings, pool)?;
        on_round(&state);
        if state.converged {
            return Ok(state);
        }
    }
}
