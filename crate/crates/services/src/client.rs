//! The email client plugin: pairs with a phone by QR payload, sends mail
//! with or without encryption, and decrypts MEG mail for display.
//!
//! The plugin never holds a private key. All cryptography on mail
//! contents happens on the paired phone; the plugin only seals requests
//! to it with the shared transport key and waits for the result.

use std::path::{Path, PathBuf};
use std::sync::RwLock;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use uuid::Uuid;

use meg_core::broker::{TaskAction, TaskStatus, TaskView};
use meg_core::crypto::{
    generate_transport_key, transport_decrypt, transport_encrypt, validate_address, FrameAction, Fingerprint,
    TransportKey,
};
use meg_core::mailbox::{OutgoingMail, StoredMail, MEG_HEADER, MEG_HEADER_VALUE};
use meg_core::wire::{ActionRequest, ActionResult, QrPayload};
use meg_core::{MegError, Result};

use crate::api::{SharedBroker, SharedMail};

const CONFIG_FILE: &str = "client.json";
pub const INVITE_SUBJECT: &str = "Invitation to exchange encrypted email with MEG";

/// Persisted plugin state. `transport_key` never changes once paired.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientConfig {
    pub client_id: Uuid,
    pub transport_key: TransportKey,
    pub account_email: String,
    pub server_url: String,
    pub mail_url: String,
    pub paired: bool,
}

impl ClientConfig {
    /// Fresh unpaired config with a new transport key.
    pub fn new(account_email: &str, server_url: &str, mail_url: &str) -> Result<Self> {
        validate_address(account_email)?;
        let transport_key = generate_transport_key()?;
        Ok(Self {
            client_id: transport_key.client_id(),
            transport_key,
            account_email: account_email.to_string(),
            server_url: server_url.to_string(),
            mail_url: mail_url.to_string(),
            paired: false,
        })
    }

    pub fn load(home: &Path) -> Result<Self> {
        let path = home.join(CONFIG_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| MegError::NotFound(format!("{}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, home: &Path) -> Result<()> {
        std::fs::create_dir_all(home).map_err(|e| MegError::Internal(format!("{}: {e}", home.display())))?;
        let path = home.join(CONFIG_FILE);
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_string_pretty(self)?)
            .and_then(|_| std::fs::rename(&tmp, &path))
            .map_err(|e| MegError::Internal(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone)]
pub struct ClientOptions {
    pub poll_interval: Duration,
    pub poll_timeout: Duration,
    /// Where to save the config after pairing; `None` for in-memory use.
    pub home: Option<PathBuf>,
}

impl Default for ClientOptions {
    fn default() -> Self {
        Self { poll_interval: Duration::from_millis(100), poll_timeout: Duration::from_secs(30), home: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutgoingEmail {
    pub to: Vec<String>,
    pub subject: String,
    pub body: String,
    pub encrypt: bool,
}

/// Client-side timings of one phone round trip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ActionTiming {
    /// Whole call: first byte sealed to result opened.
    pub total: Duration,
    /// Submit sent to result received: server plus phone.
    pub wait: Duration,
    /// Transport encryption and decryption only.
    pub aes: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionOutcome {
    pub task_id: Uuid,
    pub result: ActionResult,
    pub timing: ActionTiming,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Delivery {
    /// Delivered to every recipient; encrypted mail carries `X-MEG: 1`.
    Sent { message_ids: Vec<Uuid>, encrypted: bool },
    /// Nothing was sent; these recipients were invited to MEG instead.
    Invited { recipients: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeliveryReport {
    pub delivery: Delivery,
    pub task: Option<ActionOutcome>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReceivedMail {
    /// Not MEG mail; returned unchanged.
    Plain(StoredMail),
    /// Decrypted for display only; the stored copy is untouched.
    Decrypted {
        mail_id: Uuid,
        from: String,
        subject: String,
        body: String,
        signer_email: Option<String>,
        signer_fingerprint: Option<Fingerprint>,
    },
}

pub struct ClientPlugin {
    config: RwLock<ClientConfig>,
    broker: SharedBroker,
    mail: SharedMail,
    options: ClientOptions,
}

impl std::fmt::Debug for ClientPlugin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let c = self.config.read().unwrap();
        f.debug_struct("ClientPlugin").field("client_id", &c.client_id).field("account", &c.account_email).finish()
    }
}

/// Mail provider failures other than an outright rejection surface as
/// `delivery-failed`.
fn mail_err(e: MegError) -> MegError {
    match e {
        MegError::Rejected(_) | MegError::DeliveryFailed(_) => e,
        other => MegError::DeliveryFailed(other.to_string()),
    }
}

pub fn invitation_mail(sender: &str, recipient: &str) -> OutgoingMail {
    let body = format!(
        "Hi,\n\n{sender} wants to send you encrypted email with MEG, the Mobile\n\
         Encryption Gateway. MEG keeps your private key on your phone and works\n\
         with the email client you already use.\n\n\
         Install the MEG app, enroll with this address ({recipient}), and\n\
         {sender} will be able to send you encrypted mail.\n"
    );
    OutgoingMail::new(recipient, sender, INVITE_SUBJECT, body)
}

impl ClientPlugin {
    pub fn new(config: ClientConfig, broker: SharedBroker, mail: SharedMail, options: ClientOptions) -> Self {
        Self { config: RwLock::new(config), broker, mail, options }
    }

    pub fn config(&self) -> ClientConfig {
        self.config.read().unwrap().clone()
    }

    pub fn client_id(&self) -> Uuid {
        self.config.read().unwrap().client_id
    }

    pub fn account(&self) -> String {
        self.config.read().unwrap().account_email.clone()
    }

    fn save(&self) -> Result<()> {
        match &self.options.home {
            Some(home) => self.config().save(home),
            None => Ok(()),
        }
    }

    /// Pairing payload for the phone to scan. Repeated calls before
    /// pairing return the same key; after pairing, `already-paired`.
    pub async fn init_pairing(&self) -> Result<QrPayload> {
        if self.confirm_pairing().await? {
            return Err(MegError::AlreadyPaired);
        }
        let c = self.config();
        Ok(QrPayload::new(&c.transport_key, &c.server_url))
    }

    /// Asks the server whether a phone has taken the payload. Once it has,
    /// the plugin is paired for good and the payload is spent.
    pub async fn confirm_pairing(&self) -> Result<bool> {
        if self.config.read().unwrap().paired {
            return Ok(true);
        }
        match self.broker.pairing_of(self.client_id()).await {
            Ok(_) => {
                self.config.write().unwrap().paired = true;
                self.save()?;
                Ok(true)
            }
            Err(MegError::NotFound(_)) => Ok(false),
            Err(e) => Err(e),
        }
    }

    async fn ensure_paired(&self) -> Result<()> {
        if self.confirm_pairing().await? {
            Ok(())
        } else {
            Err(MegError::NotPaired)
        }
    }

    /// Seals `request` to the phone, submits it and waits for the result.
    pub async fn run_action(&self, request: &ActionRequest) -> Result<ActionOutcome> {
        self.ensure_paired().await?;
        let key = self.config().transport_key;
        let start = Instant::now();
        let payload = serde_json::to_vec(request)?;
        let aes_start = Instant::now();
        let frame = transport_encrypt(&payload, &key, request.action.frame_action())?;
        let mut aes = aes_start.elapsed();

        let wait_start = Instant::now();
        let task_id = self.broker.submit_task(key.client_id(), request.action, frame).await?;
        let view = self.await_terminal(task_id).await?;
        let wait = wait_start.elapsed();

        let (result, open_time) = Self::open_result(&key, view)?;
        aes += open_time;
        let timing = ActionTiming { total: start.elapsed(), wait, aes };
        Ok(ActionOutcome { task_id, result, timing })
    }

    /// Picks up a task after an earlier `timeout`.
    pub async fn resume(&self, task_id: Uuid) -> Result<ActionResult> {
        let key = self.config().transport_key;
        let view = self.await_terminal(task_id).await?;
        Ok(Self::open_result(&key, view)?.0)
    }

    async fn await_terminal(&self, task_id: Uuid) -> Result<TaskView> {
        let deadline = Instant::now() + self.options.poll_timeout;
        loop {
            let view = self.broker.poll_result(task_id).await?;
            if view.status.is_terminal() {
                return Ok(view);
            }
            if Instant::now() >= deadline {
                return Err(MegError::Timeout(task_id));
            }
            tokio::time::sleep(self.options.poll_interval).await;
        }
    }

    fn open_result(key: &TransportKey, view: TaskView) -> Result<(ActionResult, Duration)> {
        match view.status {
            TaskStatus::Completed => {
                let frame = view
                    .result_frame
                    .ok_or_else(|| MegError::Internal("completed task without result".into()))?;
                let t = Instant::now();
                let plain = transport_decrypt(&frame, key, FrameAction::Result)?;
                let elapsed = t.elapsed();
                let result: ActionResult = serde_json::from_slice(&plain)?;
                Ok((result, elapsed))
            }
            TaskStatus::Failed => Err(view
                .error
                .map(|e| MegError::from_body(&e))
                .unwrap_or_else(|| MegError::Internal("failed task without error".into()))),
            other => Err(MegError::Internal(format!("task not terminal: {}", other.as_str()))),
        }
    }

    /// Sends mail. Unencrypted mail goes straight to the provider and never
    /// touches the MEG server. Encrypted mail is sealed by the phone; if
    /// any recipient has no MEG key, nothing is sent and those recipients
    /// are invited instead.
    pub async fn send_email(&self, mail: &OutgoingEmail) -> Result<DeliveryReport> {
        if mail.to.is_empty() {
            return Err(MegError::InvalidArgument("no recipients".into()));
        }
        for to in &mail.to {
            validate_address(to)?;
        }
        let from = self.account();
        if !mail.encrypt {
            let mut ids = Vec::new();
            for to in &mail.to {
                let m = OutgoingMail::new(to, &from, &mail.subject, &mail.body);
                ids.push(self.mail.deliver(m).await.map_err(mail_err)?.id);
            }
            return Ok(DeliveryReport { delivery: Delivery::Sent { message_ids: ids, encrypted: false }, task: None });
        }

        let request = ActionRequest {
            action: TaskAction::Encrypt,
            body: mail.body.clone(),
            sender_email: from.clone(),
            recipient_emails: mail.to.clone(),
        };
        let outcome = match self.run_action(&request).await {
            Ok(o) => o,
            Err(MegError::RecipientNotFound(missing)) => {
                for r in &missing {
                    self.invite(r).await?;
                }
                return Ok(DeliveryReport { delivery: Delivery::Invited { recipients: missing }, task: None });
            }
            Err(e) => return Err(e),
        };
        let mut ids = Vec::new();
        for to in &mail.to {
            let m = OutgoingMail::new(to, &from, &mail.subject, &outcome.result.body)
                .with_header(MEG_HEADER, MEG_HEADER_VALUE);
            ids.push(self.mail.deliver(m).await.map_err(mail_err)?.id);
        }
        Ok(DeliveryReport { delivery: Delivery::Sent { message_ids: ids, encrypted: true }, task: Some(outcome) })
    }

    pub async fn inbox(&self) -> Result<Vec<StoredMail>> {
        self.mail.fetch_inbox(&self.account(), None).await.map_err(mail_err)
    }

    /// Non-MEG mail is returned as is. MEG mail goes to the phone for
    /// verification and decryption; the plaintext goes only to the caller.
    pub async fn receive_email(&self, msg: &StoredMail) -> Result<ReceivedMail> {
        Ok(self.receive_with_timing(msg).await?.0)
    }

    pub async fn receive_with_timing(&self, msg: &StoredMail) -> Result<(ReceivedMail, Option<ActionOutcome>)> {
        if !msg.is_meg() {
            return Ok((ReceivedMail::Plain(msg.clone()), None));
        }
        let request = ActionRequest {
            action: TaskAction::Decrypt,
            body: msg.body.clone(),
            sender_email: msg.from.clone(),
            recipient_emails: vec![self.account()],
        };
        let outcome = self.run_action(&request).await?;
        let shown = ReceivedMail::Decrypted {
            mail_id: msg.id,
            from: msg.from.clone(),
            subject: msg.subject().to_string(),
            body: outcome.result.body.clone(),
            signer_email: outcome.result.signer_email.clone(),
            signer_fingerprint: outcome.result.signer_fingerprint,
        };
        Ok((shown, Some(outcome)))
    }

    /// Plain invitation naming this account. Not deduplicated.
    pub async fn invite(&self, recipient: &str) -> Result<()> {
        self.mail.deliver(invitation_mail(&self.account(), recipient)).await.map_err(mail_err)?;
        Ok(())
    }

    pub async fn revoke_my_key(&self) -> Result<()> {
        self.broker.request_revocation(&self.account()).await
    }

    pub async fn complete_revocation(&self, token: &str) -> Result<()> {
        self.broker.confirm_revocation(token.trim()).await
    }
}

/// Renders the pairing payload as a QR code PNG.
pub fn write_qr_png(payload: &QrPayload, path: &Path) -> Result<()> {
    let code = qrcode::QrCode::new(payload.to_json().as_bytes())
        .map_err(|e| MegError::Internal(format!("qr encode: {e}")))?;
    let img = code.render::<image::Luma<u8>>().min_dimensions(256, 256).build();
    img.save(path).map_err(|e| MegError::Internal(format!("{}: {e}", path.display())))
}

/// QR code as terminal text, two modules per character row.
pub fn qr_text(payload: &QrPayload) -> Result<String> {
    let code = qrcode::QrCode::new(payload.to_json().as_bytes())
        .map_err(|e| MegError::Internal(format!("qr encode: {e}")))?;
    Ok(code.render::<qrcode::render::unicode::Dense1x2>().quiet_zone(true).build())
}
