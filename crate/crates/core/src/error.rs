use serde::{Deserialize, Serialize};
use uuid::Uuid;

pub type Result<T, E = MegError> = std::result::Result<T, E>;

/// Every failure a MEG component can report.
///
/// Errors cross process boundaries (agent -> broker -> client), so each
/// variant has a stable kebab-case code; see [`MegError::code`] and
/// [`ErrorBody`].
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MegError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("authentication failed")]
    AuthFailure,
    #[error("not a recipient of this message")]
    NotARecipient,
    #[error("tamper detected")]
    TamperDetected,
    #[error("signature invalid, message withheld")]
    SignatureInvalid,
    #[error("parse error: {0}")]
    Parse(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error("unknown device")]
    UnknownDevice,
    #[error("client is not paired with a device")]
    UnpairedClient,
    #[error("unknown task")]
    UnknownTask,
    #[error("wrong task state: {0}")]
    WrongState(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("revocation certificate does not match the key")]
    CertMismatch,
    #[error("the key for this address has been revoked")]
    RevokedConflict,
    #[error("revocation token is invalid, expired or already used")]
    TokenInvalid,
    #[error("already paired")]
    AlreadyPaired,
    #[error("not paired with a mobile device")]
    NotPaired,
    #[error("please log back into the mobile app to complete this action")]
    DeviceLocked,
    #[error("unknown client")]
    UnknownClient,
    #[error("the mobile device did not process the request in time; retry, or send unencrypted")]
    DeviceUnreachable,
    #[error("recipient not found: {}", .0.join(", "))]
    RecipientNotFound(Vec<String>),
    #[error("recipient key revoked: {}", .0.join(", "))]
    RecipientRevoked(Vec<String>),
    #[error("sender key has been revoked")]
    SenderRevoked,
    #[error("server unreachable: {0}")]
    ServerUnreachable(String),
    #[error("enrollment failed: {0}")]
    EnrollmentFailed(Box<MegError>),
    #[error("mail delivery failed: {0}")]
    DeliveryFailed(String),
    #[error("timed out waiting for task {0}; resume with this task id")]
    Timeout(Uuid),
    #[error("mail rejected: {0}")]
    Rejected(String),
}

impl MegError {
    pub fn code(&self) -> &'static str {
        match self {
            MegError::InvalidArgument(_) => "invalid-argument",
            MegError::AuthFailure => "auth-failure",
            MegError::NotARecipient => "not-a-recipient",
            MegError::TamperDetected => "tamper-detected",
            MegError::SignatureInvalid => "signature-invalid",
            MegError::Parse(_) => "parse-error",
            MegError::Internal(_) => "internal-error",
            MegError::UnknownDevice => "unknown-device",
            MegError::UnpairedClient => "unpaired-client",
            MegError::UnknownTask => "unknown-task",
            MegError::WrongState(_) => "wrong-state",
            MegError::NotFound(_) => "not-found",
            MegError::CertMismatch => "cert-mismatch",
            MegError::RevokedConflict => "revoked-conflict",
            MegError::TokenInvalid => "token-invalid",
            MegError::AlreadyPaired => "already-paired",
            MegError::NotPaired => "not-paired",
            MegError::DeviceLocked => "device-locked",
            MegError::UnknownClient => "unknown-client",
            MegError::DeviceUnreachable => "device-unreachable",
            MegError::RecipientNotFound(_) => "recipient-not-found",
            MegError::RecipientRevoked(_) => "recipient-revoked",
            MegError::SenderRevoked => "sender-revoked",
            MegError::ServerUnreachable(_) => "server-unreachable",
            MegError::EnrollmentFailed(_) => "enrollment-failed",
            MegError::DeliveryFailed(_) => "delivery-failed",
            MegError::Timeout(_) => "timeout",
            MegError::Rejected(_) => "rejected",
        }
    }

    /// Errors worth retrying against the server (connectivity, 5xx).
    pub fn is_transient(&self) -> bool {
        matches!(self, MegError::ServerUnreachable(_) | MegError::Internal(_))
    }

    pub fn to_body(&self) -> ErrorBody {
        let emails = match self {
            MegError::RecipientNotFound(e) | MegError::RecipientRevoked(e) => e.clone(),
            _ => Vec::new(),
        };
        let task_id = match self {
            MegError::Timeout(id) => Some(*id),
            _ => None,
        };
        ErrorBody {
            code: self.code().to_string(),
            message: self.to_string(),
            emails,
            task_id,
        }
    }

    pub fn from_body(body: &ErrorBody) -> MegError {
        // Variants carrying text render as "<prefix><text>"; recover the text.
        let detail = |wrap: fn(String) -> MegError| {
            let prefix = wrap(String::new()).to_string();
            wrap(body.message.strip_prefix(&prefix).unwrap_or(&body.message).to_string())
        };
        let msg = body.message.clone();
        match body.code.as_str() {
            "invalid-argument" => detail(MegError::InvalidArgument),
            "auth-failure" => MegError::AuthFailure,
            "not-a-recipient" => MegError::NotARecipient,
            "tamper-detected" => MegError::TamperDetected,
            "signature-invalid" => MegError::SignatureInvalid,
            "parse-error" => detail(MegError::Parse),
            "unknown-device" => MegError::UnknownDevice,
            "unpaired-client" => MegError::UnpairedClient,
            "unknown-task" => MegError::UnknownTask,
            "wrong-state" => detail(MegError::WrongState),
            "not-found" => detail(MegError::NotFound),
            "cert-mismatch" => MegError::CertMismatch,
            "revoked-conflict" => MegError::RevokedConflict,
            "token-invalid" => MegError::TokenInvalid,
            "already-paired" => MegError::AlreadyPaired,
            "not-paired" => MegError::NotPaired,
            "device-locked" => MegError::DeviceLocked,
            "unknown-client" => MegError::UnknownClient,
            "device-unreachable" => MegError::DeviceUnreachable,
            "recipient-not-found" => MegError::RecipientNotFound(body.emails.clone()),
            "recipient-revoked" => MegError::RecipientRevoked(body.emails.clone()),
            "sender-revoked" => MegError::SenderRevoked,
            "server-unreachable" => detail(MegError::ServerUnreachable),
            "delivery-failed" => detail(MegError::DeliveryFailed),
            "timeout" => match body.task_id {
                Some(id) => MegError::Timeout(id),
                None => MegError::Internal(msg),
            },
            "rejected" => detail(MegError::Rejected),
            "internal-error" => detail(MegError::Internal),
            _ => MegError::Internal(msg),
        }
    }
}

/// Wire form of an error: HTTP error bodies and failed broker tasks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub emails: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_id: Option<Uuid>,
}

impl From<&MegError> for ErrorBody {
    fn from(e: &MegError) -> Self {
        e.to_body()
    }
}

impl From<serde_json::Error> for MegError {
    fn from(e: serde_json::Error) -> Self {
        MegError::Parse(e.to_string())
    }
}
