//! The phone: holds the private key, pairs with client plugins, and
//! performs every sign/encrypt/verify/decrypt on behalf of the broker's
//! tasks.
//!
//! The private key is usable only while the app is open (`open_app` until
//! `close_app`); a task that arrives while it is closed fails with
//! `device-locked`. Tasks are processed one at a time.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex as StdMutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tokio::sync::{watch, Mutex};
use uuid::Uuid;

use meg_core::broker::{BrokerTask, Notification, TaskAction, TaskOutcome};
use meg_core::crypto::{
    generate_keypair, sign_and_encrypt, transport_decrypt, transport_encrypt, verify_and_decrypt, FrameAction,
    KeyPair, MegEnvelope, PublicKey, StorageKey, TransportFrame, TransportKey, UnlockedKey, UserIdentity,
};
use meg_core::wire::{ActionRequest, ActionResult, QrPayload};
use meg_core::{MegError, Result};

use crate::api::SharedBroker;

const KEY_FILE: &str = "key.json";
const DEVICE_FILE: &str = "device.json";
const PAIRINGS_FILE: &str = "pairings.sealed";
const PAIRINGS_LABEL: &str = "pairings";

#[derive(Debug, Clone)]
pub struct AgentOptions {
    /// Where key, device and pairing files live; `None` keeps everything
    /// in memory.
    pub home: Option<PathBuf>,
    pub server_url: String,
    /// Long-poll length per notification request.
    pub notify_wait: Duration,
    pub backoff_initial: Duration,
    pub backoff_max: Duration,
}

impl AgentOptions {
    pub fn new(server_url: impl Into<String>) -> Self {
        Self {
            home: None,
            server_url: server_url.into(),
            notify_wait: Duration::from_secs(25),
            backoff_initial: Duration::from_millis(500),
            backoff_max: Duration::from_secs(8),
        }
    }

    pub fn with_home(mut self, home: impl Into<PathBuf>) -> Self {
        self.home = Some(home.into());
        self
    }
}

/// Limits for [`Agent::run_loop`].
#[derive(Debug, Clone, Copy, Default)]
pub struct RunLimits {
    /// Stop once at least this many tasks are done. A fetched batch is
    /// always finished, so the count can overshoot.
    pub max_tasks: Option<usize>,
    /// Stop after this long without work.
    pub max_idle: Option<Duration>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DeviceFile {
    device_id: Uuid,
    email: String,
    server_url: String,
}

#[derive(Serialize, Deserialize)]
struct PairingsFile {
    pairings: Vec<TransportKey>,
}

struct Session {
    key: UnlockedKey,
    storage: StorageKey,
}

struct Inner {
    keypair: KeyPair,
    session: Option<Session>,
    pairings: HashMap<Uuid, TransportKey>,
}

/// Phone-side processing time per task, from receipt of the task to just
/// before its completion is sent.
#[derive(Debug, Clone, Default)]
pub struct SpanLog(Arc<StdMutex<HashMap<Uuid, Duration>>>);

impl SpanLog {
    pub fn get(&self, task_id: &Uuid) -> Option<Duration> {
        self.0.lock().unwrap().get(task_id).copied()
    }

    fn record(&self, task_id: Uuid, d: Duration) {
        self.0.lock().unwrap().insert(task_id, d);
    }
}

pub struct Agent {
    broker: SharedBroker,
    options: AgentOptions,
    device_id: Uuid,
    email: String,
    inner: Mutex<Inner>,
    spans: SpanLog,
    shutdown: watch::Sender<bool>,
}

impl std::fmt::Debug for Agent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Agent").field("device_id", &self.device_id).field("email", &self.email).finish_non_exhaustive()
    }
}

fn io_err(path: &Path, e: std::io::Error) -> MegError {
    MegError::Internal(format!("{}: {e}", path.display()))
}

/// Writes via a temporary file and rename so a crash never leaves a torn file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

impl Agent {
    /// Generates a keypair, publishes it with its revocation certificate,
    /// registers the device, and only then writes anything locally. The
    /// returned agent is unlocked.
    ///
    /// Any failure is `enrollment-failed` wrapping the cause, with no
    /// files written.
    pub async fn enroll(
        identity: &UserIdentity,
        password: &str,
        broker: SharedBroker,
        options: AgentOptions,
    ) -> Result<Agent> {
        let fail = |e: MegError| MegError::EnrollmentFailed(Box::new(e));
        if let Some(home) = &options.home {
            if home.join(KEY_FILE).exists() {
                return Err(fail(MegError::InvalidArgument(format!(
                    "{} already holds an enrolled key",
                    home.display()
                ))));
            }
        }
        let (keypair, cert) = generate_keypair(identity, password).map_err(fail)?;
        let (key, storage) = keypair.unlock_with_storage_key(password).map_err(fail)?;
        broker
            .upload_public_key(identity.email(), &keypair.public_key().to_bytes(), &cert.to_bytes())
            .await
            .map_err(fail)?;
        let device_id = Uuid::new_v4();
        broker.register_device(device_id).await.map_err(fail)?;

        let agent = Agent::assemble(broker, options, device_id, identity.email().to_string(), keypair);
        agent.inner.lock().await.session = Some(Session { key, storage });
        agent.persist_identity().map_err(fail)?;
        tracing::info!(device = %device_id, email = identity.email(), "enrolled");
        Ok(agent)
    }

    /// Loads an enrolled agent from `options.home`, locked.
    pub fn load(broker: SharedBroker, options: AgentOptions) -> Result<Agent> {
        let home = options
            .home
            .clone()
            .ok_or_else(|| MegError::InvalidArgument("agent home directory not set".into()))?;
        let key_path = home.join(KEY_FILE);
        if !key_path.exists() {
            return Err(MegError::NotFound(format!("no enrolled key in {}", home.display())));
        }
        let keypair = KeyPair::from_json(&std::fs::read_to_string(&key_path).map_err(|e| io_err(&key_path, e))?)?;
        let dev_path = home.join(DEVICE_FILE);
        let device: DeviceFile =
            serde_json::from_str(&std::fs::read_to_string(&dev_path).map_err(|e| io_err(&dev_path, e))?)?;
        Ok(Agent::assemble(broker, options, device.device_id, device.email, keypair))
    }

    fn assemble(broker: SharedBroker, options: AgentOptions, device_id: Uuid, email: String, keypair: KeyPair) -> Self {
        Agent {
            broker,
            options,
            device_id,
            email,
            inner: Mutex::new(Inner { keypair, session: None, pairings: HashMap::new() }),
            spans: SpanLog::default(),
            shutdown: watch::channel(false).0,
        }
    }

    fn persist_identity(&self) -> Result<()> {
        let Some(home) = &self.options.home else { return Ok(()) };
        std::fs::create_dir_all(home).map_err(|e| io_err(home, e))?;
        let keypair_json = self.inner.try_lock().expect("not shared yet").keypair.to_json();
        let device = DeviceFile {
            device_id: self.device_id,
            email: self.email.clone(),
            server_url: self.options.server_url.clone(),
        };
        write_atomic(&home.join(DEVICE_FILE), serde_json::to_string_pretty(&device)?.as_bytes())?;
        write_atomic(&home.join(KEY_FILE), keypair_json.as_bytes())
    }

    fn persist_pairings(&self, inner: &Inner) -> Result<()> {
        let Some(home) = &self.options.home else { return Ok(()) };
        let session = inner.session.as_ref().ok_or(MegError::DeviceLocked)?;
        let mut pairings: Vec<TransportKey> = inner.pairings.values().cloned().collect();
        pairings.sort_by_key(|k| k.client_id());
        let plain = serde_json::to_vec(&PairingsFile { pairings })?;
        let sealed = session.storage.seal(&plain, PAIRINGS_LABEL)?;
        write_atomic(&home.join(PAIRINGS_FILE), &sealed)
    }

    fn load_pairings(&self, storage: &StorageKey) -> Result<Vec<TransportKey>> {
        let Some(home) = &self.options.home else { return Ok(Vec::new()) };
        let path = home.join(PAIRINGS_FILE);
        if !path.exists() {
            return Ok(Vec::new());
        }
        let sealed = std::fs::read(&path).map_err(|e| io_err(&path, e))?;
        let plain = storage.open(&sealed, PAIRINGS_LABEL)?;
        Ok(serde_json::from_slice::<PairingsFile>(&plain)?.pairings)
    }

    pub fn device_id(&self) -> Uuid {
        self.device_id
    }

    pub fn email(&self) -> &str {
        &self.email
    }

    pub fn spans(&self) -> &SpanLog {
        &self.spans
    }

    pub async fn public_key(&self) -> PublicKey {
        *self.inner.lock().await.keypair.public_key()
    }

    pub async fn is_open(&self) -> bool {
        self.inner.lock().await.session.is_some()
    }

    pub async fn paired_clients(&self) -> Vec<Uuid> {
        let mut ids: Vec<_> = self.inner.lock().await.pairings.keys().copied().collect();
        ids.sort();
        ids
    }

    /// Unlocks the private key for this session. Idempotent.
    pub async fn open_app(&self, password: &str) -> Result<()> {
        let mut inner = self.inner.lock().await;
        if inner.session.is_some() {
            return Ok(());
        }
        let (key, storage) = inner.keypair.unlock_with_storage_key(password)?;
        for k in self.load_pairings(&storage)? {
            inner.pairings.entry(k.client_id()).or_insert(k);
        }
        inner.session = Some(Session { key, storage });
        tracing::info!("app opened");
        Ok(())
    }

    /// Drops the unlocked key. Idempotent.
    pub async fn close_app(&self) {
        if self.inner.lock().await.session.take().is_some() {
            tracing::info!("app closed");
        }
    }

    /// Accepts a scanned pairing payload. Needs the app open, since the
    /// stored pairings are sealed under the unlocked key's storage key.
    pub async fn pair(&self, qr_text: &str) -> Result<()> {
        let payload = QrPayload::parse(qr_text)?;
        let key = payload.transport_key()?;
        let mut inner = self.inner.lock().await;
        if inner.session.is_none() {
            return Err(MegError::DeviceLocked);
        }
        if inner.pairings.contains_key(&key.client_id()) {
            return Err(MegError::AlreadyPaired);
        }
        self.broker.record_pairing(self.device_id, key.client_id()).await?;
        inner.pairings.insert(key.client_id(), key);
        self.persist_pairings(&inner)?;
        tracing::info!(client = %payload.client_id, "paired");
        Ok(())
    }

    /// Makes a running [`Agent::run_loop`] return after its current step.
    pub fn shutdown(&self) {
        self.shutdown.send_replace(true);
    }

    fn stopping(&self) -> bool {
        *self.shutdown.borrow()
    }

    /// Retries transient server errors with capped exponential backoff,
    /// until success, a permanent error, or shutdown.
    async fn retry<T, F, Fut>(&self, mut op: F) -> Result<T>
    where
        F: FnMut() -> Fut,
        Fut: std::future::Future<Output = Result<T>>,
    {
        let mut delay = self.options.backoff_initial;
        let mut stop = self.shutdown.subscribe();
        loop {
            match op().await {
                Err(e) if e.is_transient() && !self.stopping() => {
                    tracing::warn!(error = %e, retry_in = ?delay, "server error, retrying");
                    tokio::select! {
                        _ = tokio::time::sleep(delay) => {}
                        _ = stop.wait_for(|s| *s) => return Err(e),
                    }
                    delay = (delay * 2).min(self.options.backoff_max);
                }
                other => return other,
            }
        }
    }

    /// Waits for work, fetches it and processes each task in order, until
    /// a limit is reached or [`Agent::shutdown`] is called. Returns the
    /// number of tasks completed (successfully or as failed).
    pub async fn run_loop(&self, limits: RunLimits) -> Result<usize> {
        let mut processed = 0usize;
        let mut idle_since = Instant::now();
        let mut stop = self.shutdown.subscribe();
        loop {
            if self.stopping() || limits.max_tasks.is_some_and(|m| processed >= m) {
                break;
            }
            let mut wait = self.options.notify_wait;
            if let Some(max_idle) = limits.max_idle {
                let left = max_idle.saturating_sub(idle_since.elapsed());
                if left.is_zero() {
                    break;
                }
                wait = wait.min(left);
            }
            let note = tokio::select! {
                n = self.retry(|| self.broker.await_notification(self.device_id, wait)) => n?,
                _ = stop.wait_for(|s| *s) => break,
            };
            if note == Notification::Timeout {
                continue;
            }
            let tasks = self.retry(|| self.broker.fetch_pending(self.device_id)).await?;
            for task in tasks {
                self.handle(task).await?;
                processed += 1;
            }
            idle_since = Instant::now();
        }
        Ok(processed)
    }

    async fn handle(&self, task: BrokerTask) -> Result<()> {
        let started = Instant::now();
        let outcome = match self.process_task(&task).await {
            Ok(frame) => TaskOutcome::Completed(frame),
            Err(e) => {
                tracing::info!(task = %task.task_id, code = e.code(), "task failed");
                TaskOutcome::Failed(e.to_body())
            }
        };
        self.spans.record(task.task_id, started.elapsed());
        match self.retry(|| self.broker.complete_task(task.task_id, outcome.clone())).await {
            Ok(()) => Ok(()),
            // Already terminal (e.g. timed out on the server): never redo it.
            Err(e @ (MegError::WrongState(_) | MegError::UnknownTask)) => {
                tracing::warn!(task = %task.task_id, error = %e, "completion refused");
                Ok(())
            }
            Err(e) => Err(e),
        }
    }

    /// Runs one task and returns the result frame, or the error to report.
    pub async fn process_task(&self, task: &BrokerTask) -> Result<TransportFrame> {
        let inner = self.inner.lock().await;
        let session = inner.session.as_ref().ok_or(MegError::DeviceLocked)?;
        let tkey = inner.pairings.get(&task.client_id).ok_or(MegError::UnknownClient)?;
        if task.request_frame.client_id != task.client_id {
            return Err(MegError::TamperDetected);
        }
        let payload = transport_decrypt(&task.request_frame, tkey, task.action.frame_action())?;
        let request: ActionRequest = serde_json::from_slice(&payload)
            .map_err(|e| MegError::InvalidArgument(format!("malformed action request: {e}")))?;
        if request.action != task.action {
            return Err(MegError::InvalidArgument("request action does not match task".into()));
        }
        request.validate()?;
        let result = match request.action {
            TaskAction::Encrypt => self.encrypt(&session.key, &request).await?,
            TaskAction::Decrypt => self.decrypt(&session.key, &request).await?,
        };
        transport_encrypt(&serde_json::to_vec(&result)?, tkey, FrameAction::Result)
    }

    async fn encrypt(&self, key: &UnlockedKey, req: &ActionRequest) -> Result<ActionResult> {
        let mut missing = Vec::new();
        let mut revoked = Vec::new();
        let mut keys = Vec::new();
        for email in &req.recipient_emails {
            match self.retry(|| self.broker.lookup_public_key(email)).await {
                Ok(r) if r.revoked => revoked.push(email.clone()),
                Ok(r) => keys.push(r.public_key),
                Err(MegError::NotFound(_)) => missing.push(email.clone()),
                Err(e) => return Err(e),
            }
        }
        if !missing.is_empty() {
            return Err(MegError::RecipientNotFound(missing));
        }
        if !revoked.is_empty() {
            return Err(MegError::RecipientRevoked(revoked));
        }
        let env = sign_and_encrypt(req.body.as_bytes(), key, &keys)?;
        Ok(ActionResult {
            body: env.armor(),
            signer_email: Some(self.email.clone()),
            signer_fingerprint: Some(key.fingerprint()),
        })
    }

    /// The signer comes from the fingerprint inside the envelope, never
    /// from the request's claimed sender.
    async fn decrypt(&self, key: &UnlockedKey, req: &ActionRequest) -> Result<ActionResult> {
        let env = MegEnvelope::from_armor(&req.body).map_err(|_| MegError::TamperDetected)?;
        if !env.recipient_fingerprints().any(|f| *f == key.fingerprint()) {
            return Err(MegError::NotARecipient);
        }
        let sender = match self.retry(|| self.broker.lookup_by_fingerprint(&env.sender_fpr)).await {
            Ok(r) => r,
            // Unknown signer: nothing to verify against, so nothing is released.
            Err(MegError::NotFound(_)) => return Err(MegError::SignatureInvalid),
            Err(e) => return Err(e),
        };
        if sender.revoked {
            return Err(MegError::SenderRevoked);
        }
        let plaintext = verify_and_decrypt(&env, key, &sender.public_key)?;
        let body = String::from_utf8(plaintext)
            .map_err(|_| MegError::InvalidArgument("decrypted body is not UTF-8".into()))?;
        Ok(ActionResult {
            body,
            signer_email: Some(sender.email),
            signer_fingerprint: Some(sender.fingerprint),
        })
    }
}
