//! JSON bodies exchanged over HTTP, and the payloads sealed inside
//! transport frames.

use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::broker::TaskAction;
use crate::codec::b64;
use crate::crypto::{encode_key, Fingerprint, TransportFrame, TransportKey};
use crate::error::{ErrorBody, MegError, Result};

pub const DEFAULT_SERVER_ADDR: &str = "127.0.0.1:8780";
pub const DEFAULT_MAIL_ADDR: &str = "127.0.0.1:8781";

pub const QR_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub ok: bool,
}

impl Ack {
    pub const OK: Ack = Ack { ok: true };
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterDeviceBody {
    pub device_id: Uuid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairingBody {
    pub device_id: Uuid,
    pub client_id: Uuid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UploadKeyBody {
    pub email: String,
    #[serde(with = "b64")]
    pub public_key: Vec<u8>,
    #[serde(with = "b64")]
    pub revocation_cert: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevocationRequestBody {
    pub email: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevocationConfirmBody {
    pub token: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitTaskBody {
    pub client_id: Uuid,
    pub action: TaskAction,
    pub frame: TransportFrame,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitTaskResponse {
    pub task_id: Uuid,
}

/// Long-poll answer: `event` is `"pending"` or `"timeout"`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NotificationBody {
    pub event: String,
    #[serde(default)]
    pub count: usize,
}

/// Exactly one of `frame` and `error` is set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompleteTaskBody {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<TransportFrame>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MailReceipt {
    pub id: Uuid,
    pub received_at: chrono::DateTime<chrono::Utc>,
}

/// Pairing payload shown as a QR code by the client and scanned by the phone.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QrPayload {
    pub version: u32,
    pub client_id: Uuid,
    #[serde(with = "b64")]
    pub transport_key: Vec<u8>,
    pub server_url: String,
}

impl QrPayload {
    pub fn new(key: &TransportKey, server_url: impl Into<String>) -> Self {
        Self {
            version: QR_VERSION,
            client_id: key.client_id(),
            transport_key: key.key_bytes().to_vec(),
            server_url: server_url.into(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("qr payload serializes")
    }

    /// Parses and validates: known version, 32-byte key.
    pub fn parse(text: &str) -> Result<Self> {
        let p: QrPayload = serde_json::from_str(text.trim())?;
        if p.version != QR_VERSION {
            return Err(MegError::Parse(format!("unsupported pairing payload version {}", p.version)));
        }
        p.transport_key()?;
        Ok(p)
    }

    pub fn transport_key(&self) -> Result<TransportKey> {
        TransportKey::from_bytes(self.client_id, &self.transport_key).map_err(|e| MegError::Parse(e.to_string()))
    }

    /// Key as base64url, for display.
    pub fn key_text(&self) -> Result<String> {
        Ok(encode_key(&self.transport_key()?))
    }
}

/// Plaintext of a request frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionRequest {
    pub action: TaskAction,
    /// Plaintext email body for encrypt; armored envelope for decrypt.
    pub body: String,
    pub sender_email: String,
    #[serde(default)]
    pub recipient_emails: Vec<String>,
}

impl ActionRequest {
    pub fn validate(&self) -> Result<()> {
        if self.body.is_empty() {
            return Err(MegError::InvalidArgument("empty body".into()));
        }
        if self.action == TaskAction::Encrypt && self.recipient_emails.is_empty() {
            return Err(MegError::InvalidArgument("no recipients".into()));
        }
        Ok(())
    }
}

/// Plaintext of a result frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionResult {
    /// Armored envelope for encrypt; verified plaintext for decrypt.
    pub body: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signer_email: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signer_fingerprint: Option<Fingerprint>,
}
