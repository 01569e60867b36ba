//! Keystore and task broker behind one HTTP API.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use uuid::Uuid;

use meg_core::broker::{Broker, BrokerConfig, BrokerTask, Notification, TaskAction, TaskOutcome, TaskView};
use meg_core::clock::{Clock, SystemClock};
use meg_core::crypto::{Fingerprint, TransportFrame};
use meg_core::journal::{FileJournal, JournalSink};
use meg_core::keystore::{Keystore, KeystoreConfig, PublicKeyRecord, RevocationRequest};
use meg_core::mailbox::OutgoingMail;
use meg_core::wire::{
    Ack, CompleteTaskBody, NotificationBody, PairingBody, RegisterDeviceBody, RevocationConfirmBody,
    RevocationRequestBody, SubmitTaskBody, SubmitTaskResponse, UploadKeyBody,
};
use meg_core::{ErrorBody, MegError, Result};

use crate::api::{BrokerApi, SharedMail};

/// Sender address of server-generated mail.
pub const SERVER_MAIL_FROM: &str = "no-reply@meg.local";
pub const REVOCATION_SUBJECT: &str = "Confirm MEG key revocation";
const TOKEN_PREFIX: &str = "Revocation token: ";

/// Long polls are clamped to this.
pub const MAX_NOTIFY_WAIT: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, Default)]
pub struct ServerConfig {
    pub broker: BrokerConfig,
    pub keystore: KeystoreConfig,
    pub journal_path: Option<PathBuf>,
}

impl ServerConfig {
    /// Reads `MEG_TASK_TTL_S`, `MEG_DELIVERY_TIMEOUT_S`, `MEG_TOKEN_TTL_S`
    /// and `MEG_JOURNAL_PATH`; unset variables keep their defaults.
    pub fn from_env() -> Result<Self> {
        let secs = |name: &str| -> Result<Option<Duration>> {
            match std::env::var(name) {
                Ok(v) => v
                    .trim()
                    .parse::<u64>()
                    .map(|s| Some(Duration::from_secs(s)))
                    .map_err(|_| MegError::InvalidArgument(format!("{name} must be whole seconds, got {v:?}"))),
                Err(_) => Ok(None),
            }
        };
        let mut cfg = ServerConfig::default();
        if let Some(d) = secs("MEG_TASK_TTL_S")? {
            cfg.broker.task_ttl = d;
        }
        if let Some(d) = secs("MEG_DELIVERY_TIMEOUT_S")? {
            cfg.broker.delivery_timeout = d;
        }
        if let Some(d) = secs("MEG_TOKEN_TTL_S")? {
            cfg.keystore.token_ttl = d;
        }
        cfg.journal_path = std::env::var_os("MEG_JOURNAL_PATH").map(PathBuf::from);
        Ok(cfg)
    }
}

pub fn revocation_mail(request: &RevocationRequest) -> OutgoingMail {
    let body = format!(
        "Someone asked to revoke the MEG key for {email} (fingerprint {fpr}).\n\
         If this was you, confirm with:\n\n{TOKEN_PREFIX}{token}\n\n\
         The token expires at {expires} and can be used once. If you did not\n\
         ask for this, ignore this message and your key stays active.\n",
        email = request.email,
        fpr = request.fingerprint,
        token = request.token,
        expires = request.expires_at.to_rfc3339(),
    );
    OutgoingMail::new(&request.email, SERVER_MAIL_FROM, REVOCATION_SUBJECT, body)
}

/// Pulls the token out of a revocation confirmation mail.
pub fn extract_revocation_token(body: &str) -> Option<String> {
    body.lines().find_map(|l| l.trim().strip_prefix(TOKEN_PREFIX)).map(|t| t.trim().to_string())
}

/// Server state: keystore, broker, and the mail provider used for
/// revocation confirmations.
pub struct MegServer {
    pub keystore: Keystore,
    pub broker: Broker,
    mail: SharedMail,
}

impl std::fmt::Debug for MegServer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MegServer").finish_non_exhaustive()
    }
}

impl MegServer {
    /// Replays the journal at `config.journal_path`, if any, and keeps
    /// appending to it.
    pub fn open(config: ServerConfig, clock: Arc<dyn Clock>, mail: SharedMail) -> Result<Self> {
        let (journal, events): (Option<Arc<dyn JournalSink>>, _) = match &config.journal_path {
            Some(path) => {
                let (j, events) = FileJournal::open(path)?;
                (Some(Arc::new(j)), events)
            }
            None => (None, Vec::new()),
        };
        Ok(Self {
            keystore: Keystore::restore(&events, config.keystore, clock.clone(), journal.clone()),
            broker: Broker::restore(&events, config.broker, clock, journal),
            mail,
        })
    }

    pub fn in_memory(mail: SharedMail) -> Self {
        Self::open(ServerConfig::default(), Arc::new(SystemClock), mail).expect("no journal to open")
    }

    pub async fn request_revocation(&self, email: &str) -> Result<()> {
        let request = self.keystore.request_revocation(email)?;
        self.mail.deliver(revocation_mail(&request)).await.map_err(|e| match e {
            MegError::DeliveryFailed(_) => e,
            other => MegError::DeliveryFailed(other.to_string()),
        })?;
        tracing::info!(email = %request.email, "revocation token mailed");
        Ok(())
    }

    /// Keystore and broker state as JSON, for at-rest inspection.
    pub fn dump(&self) -> String {
        format!("{}\n{}", self.keystore.dump(), self.broker.dump())
    }
}

/// In-process [`BrokerApi`] over a shared [`MegServer`].
#[derive(Debug, Clone)]
pub struct LocalBroker(pub Arc<MegServer>);

#[async_trait]
impl BrokerApi for LocalBroker {
    async fn register_device(&self, device_id: Uuid) -> Result<()> {
        self.0.broker.register_device(device_id)
    }

    async fn record_pairing(&self, device_id: Uuid, client_id: Uuid) -> Result<()> {
        self.0.broker.record_pairing(device_id, client_id)
    }

    async fn pairing_of(&self, client_id: Uuid) -> Result<Uuid> {
        self.0.broker.pairing_of(client_id)
    }

    async fn upload_public_key(&self, email: &str, public_key: &[u8], revocation_cert: &[u8]) -> Result<()> {
        self.0.keystore.upload_public_key(email, public_key, revocation_cert).map(|_| ())
    }

    async fn lookup_public_key(&self, email: &str) -> Result<PublicKeyRecord> {
        self.0.keystore.lookup_public_key(email)
    }

    async fn lookup_by_fingerprint(&self, fingerprint: &Fingerprint) -> Result<PublicKeyRecord> {
        self.0.keystore.lookup_by_fingerprint(fingerprint)
    }

    async fn request_revocation(&self, email: &str) -> Result<()> {
        self.0.request_revocation(email).await
    }

    async fn confirm_revocation(&self, token: &str) -> Result<()> {
        self.0.keystore.confirm_revocation(token).map(|_| ())
    }

    async fn submit_task(&self, client_id: Uuid, action: TaskAction, frame: TransportFrame) -> Result<Uuid> {
        self.0.broker.submit_task(client_id, action, frame)
    }

    async fn await_notification(&self, device_id: Uuid, timeout: Duration) -> Result<Notification> {
        self.0.broker.await_notification(device_id, timeout).await
    }

    async fn fetch_pending(&self, device_id: Uuid) -> Result<Vec<BrokerTask>> {
        self.0.broker.fetch_pending(device_id)
    }

    async fn complete_task(&self, task_id: Uuid, outcome: TaskOutcome) -> Result<()> {
        self.0.broker.complete_task(task_id, outcome)
    }

    async fn poll_result(&self, task_id: Uuid) -> Result<TaskView> {
        self.0.broker.poll_result(task_id)
    }
}

/// HTTP status for an error body.
pub fn status_for(e: &MegError) -> StatusCode {
    match e {
        MegError::InvalidArgument(_) | MegError::Parse(_) => StatusCode::BAD_REQUEST,
        MegError::NotFound(_) | MegError::UnknownDevice | MegError::UnknownTask => StatusCode::NOT_FOUND,
        MegError::UnpairedClient => StatusCode::FORBIDDEN,
        MegError::WrongState(_) | MegError::AlreadyPaired | MegError::RevokedConflict => StatusCode::CONFLICT,
        MegError::CertMismatch => StatusCode::UNPROCESSABLE_ENTITY,
        MegError::TokenInvalid => StatusCode::GONE,
        MegError::Rejected(_) => StatusCode::UNPROCESSABLE_ENTITY,
        MegError::DeliveryFailed(_) => StatusCode::BAD_GATEWAY,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

/// Error response carrying an [`ErrorBody`].
#[derive(Debug)]
pub struct ApiError(pub MegError);

impl From<MegError> for ApiError {
    fn from(e: MegError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = status_for(&self.0);
        if status.is_server_error() {
            tracing::warn!(code = self.0.code(), "request failed");
        }
        (status, Json(self.0.to_body())).into_response()
    }
}

/// Maps axum's own extractor rejections (bad JSON, bad query) to the
/// shared error body.
pub(crate) fn parse_rejection(e: impl std::fmt::Display) -> ApiError {
    ApiError(MegError::InvalidArgument(e.to_string()))
}

type ApiResult<T> = std::result::Result<Json<T>, ApiError>;
type Body<T> = std::result::Result<Json<T>, axum::extract::rejection::JsonRejection>;

fn body<T>(b: Body<T>) -> std::result::Result<T, ApiError> {
    b.map(|Json(t)| t).map_err(parse_rejection)
}

pub fn router(server: Arc<MegServer>) -> Router {
    Router::new()
        .route("/v1/devices", post(register_device))
        .route("/v1/pairings", post(record_pairing))
        .route("/v1/pairings/{client_id}", get(pairing_of))
        .route("/v1/keys", post(upload_key).get(lookup_key))
        .route("/v1/revocations/request", post(request_revocation))
        .route("/v1/revocations/confirm", post(confirm_revocation))
        .route("/v1/tasks", post(submit_task))
        .route("/v1/tasks/pending", get(fetch_pending))
        .route("/v1/tasks/{task_id}", get(poll_result))
        .route("/v1/tasks/{task_id}/complete", post(complete_task))
        .route("/v1/notifications", get(await_notification))
        .with_state(server)
}

async fn register_device(State(s): State<Arc<MegServer>>, b: Body<RegisterDeviceBody>) -> ApiResult<Ack> {
    let b = body(b)?;
    s.broker.register_device(b.device_id)?;
    tracing::info!(device = %b.device_id, "device registered");
    Ok(Json(Ack::OK))
}

async fn record_pairing(State(s): State<Arc<MegServer>>, b: Body<PairingBody>) -> ApiResult<Ack> {
    let b = body(b)?;
    s.broker.record_pairing(b.device_id, b.client_id)?;
    tracing::info!(device = %b.device_id, client = %b.client_id, "pairing recorded");
    Ok(Json(Ack::OK))
}

async fn pairing_of(State(s): State<Arc<MegServer>>, Path(client_id): Path<Uuid>) -> ApiResult<PairingBody> {
    let device_id = s.broker.pairing_of(client_id)?;
    Ok(Json(PairingBody { device_id, client_id }))
}

async fn upload_key(State(s): State<Arc<MegServer>>, b: Body<UploadKeyBody>) -> ApiResult<Ack> {
    let b = body(b)?;
    let record = s.keystore.upload_public_key(&b.email, &b.public_key, &b.revocation_cert)?;
    tracing::info!(email = %record.email, fingerprint = %record.fingerprint, "public key stored");
    Ok(Json(Ack::OK))
}

#[derive(Debug, Deserialize)]
struct KeyQuery {
    email: Option<String>,
    fingerprint: Option<String>,
}

async fn lookup_key(
    State(s): State<Arc<MegServer>>,
    q: std::result::Result<Query<KeyQuery>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<PublicKeyRecord> {
    let Query(q) = q.map_err(parse_rejection)?;
    let record = match (q.email, q.fingerprint) {
        (Some(email), None) => s.keystore.lookup_public_key(&email)?,
        (None, Some(fpr)) => s.keystore.lookup_by_fingerprint(&fpr.parse::<Fingerprint>()?)?,
        _ => return Err(MegError::InvalidArgument("give exactly one of email, fingerprint".into()).into()),
    };
    Ok(Json(record))
}

async fn request_revocation(State(s): State<Arc<MegServer>>, b: Body<RevocationRequestBody>) -> ApiResult<Ack> {
    let b = body(b)?;
    s.request_revocation(&b.email).await?;
    Ok(Json(Ack::OK))
}

async fn confirm_revocation(State(s): State<Arc<MegServer>>, b: Body<RevocationConfirmBody>) -> ApiResult<Ack> {
    let b = body(b)?;
    let record = s.keystore.confirm_revocation(&b.token)?;
    tracing::info!(email = %record.email, fingerprint = %record.fingerprint, "key revoked");
    Ok(Json(Ack::OK))
}

async fn submit_task(State(s): State<Arc<MegServer>>, b: Body<SubmitTaskBody>) -> ApiResult<SubmitTaskResponse> {
    let b = body(b)?;
    let described = b.frame.describe();
    let task_id = s.broker.submit_task(b.client_id, b.action, b.frame)?;
    tracing::info!(task = %task_id, frame = %described, "task submitted");
    Ok(Json(SubmitTaskResponse { task_id }))
}

#[derive(Debug, Deserialize)]
struct DeviceQuery {
    device_id: Uuid,
}

#[derive(Debug, Deserialize)]
struct NotifyQuery {
    device_id: Uuid,
    #[serde(default)]
    timeout_ms: u64,
}

async fn await_notification(
    State(s): State<Arc<MegServer>>,
    q: std::result::Result<Query<NotifyQuery>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<NotificationBody> {
    let Query(q) = q.map_err(parse_rejection)?;
    let wait = Duration::from_millis(q.timeout_ms).min(MAX_NOTIFY_WAIT);
    let body = match s.broker.await_notification(q.device_id, wait).await? {
        Notification::Pending { count } => NotificationBody { event: "pending".into(), count },
        Notification::Timeout => NotificationBody { event: "timeout".into(), count: 0 },
    };
    Ok(Json(body))
}

async fn fetch_pending(
    State(s): State<Arc<MegServer>>,
    q: std::result::Result<Query<DeviceQuery>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<Vec<BrokerTask>> {
    let Query(q) = q.map_err(parse_rejection)?;
    let tasks = s.broker.fetch_pending(q.device_id)?;
    if !tasks.is_empty() {
        tracing::info!(device = %q.device_id, count = tasks.len(), "tasks delivered");
    }
    Ok(Json(tasks))
}

async fn complete_task(
    State(s): State<Arc<MegServer>>,
    Path(task_id): Path<Uuid>,
    b: Body<CompleteTaskBody>,
) -> ApiResult<Ack> {
    let outcome = match body(b)? {
        CompleteTaskBody { frame: Some(f), error: None } => TaskOutcome::Completed(f),
        CompleteTaskBody { frame: None, error: Some(e) } => TaskOutcome::Failed(e),
        _ => return Err(MegError::InvalidArgument("give exactly one of frame, error".into()).into()),
    };
    let code = match &outcome {
        TaskOutcome::Completed(_) => "ok".to_string(),
        TaskOutcome::Failed(ErrorBody { code, .. }) => code.clone(),
    };
    s.broker.complete_task(task_id, outcome)?;
    tracing::info!(task = %task_id, outcome = %code, "task completed");
    Ok(Json(Ack::OK))
}

async fn poll_result(State(s): State<Arc<MegServer>>, Path(task_id): Path<Uuid>) -> ApiResult<TaskView> {
    Ok(Json(s.broker.poll_result(task_id)?))
}
