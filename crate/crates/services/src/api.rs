//! The operations agents and clients need from the server and the mail
//! provider, independent of transport.

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use chrono::{DateTime, Utc};
use uuid::Uuid;

use meg_core::broker::{BrokerTask, Notification, TaskAction, TaskOutcome, TaskView};
use meg_core::crypto::{Fingerprint, TransportFrame};
use meg_core::keystore::PublicKeyRecord;
use meg_core::mailbox::{OutgoingMail, StoredMail};
use meg_core::wire::MailReceipt;
use meg_core::Result;

#[async_trait]
pub trait BrokerApi: Send + Sync {
    async fn register_device(&self, device_id: Uuid) -> Result<()>;
    async fn record_pairing(&self, device_id: Uuid, client_id: Uuid) -> Result<()>;
    /// Device the client is routed to; `not-found` when unpaired.
    async fn pairing_of(&self, client_id: Uuid) -> Result<Uuid>;

    async fn upload_public_key(&self, email: &str, public_key: &[u8], revocation_cert: &[u8]) -> Result<()>;
    async fn lookup_public_key(&self, email: &str) -> Result<PublicKeyRecord>;
    async fn lookup_by_fingerprint(&self, fingerprint: &Fingerprint) -> Result<PublicKeyRecord>;
    /// Issues a token and mails it to `email`.
    async fn request_revocation(&self, email: &str) -> Result<()>;
    async fn confirm_revocation(&self, token: &str) -> Result<()>;

    async fn submit_task(&self, client_id: Uuid, action: TaskAction, frame: TransportFrame) -> Result<Uuid>;
    async fn await_notification(&self, device_id: Uuid, timeout: Duration) -> Result<Notification>;
    async fn fetch_pending(&self, device_id: Uuid) -> Result<Vec<BrokerTask>>;
    async fn complete_task(&self, task_id: Uuid, outcome: TaskOutcome) -> Result<()>;
    async fn poll_result(&self, task_id: Uuid) -> Result<TaskView>;
}

#[async_trait]
pub trait MailApi: Send + Sync {
    async fn deliver(&self, mail: OutgoingMail) -> Result<MailReceipt>;
    async fn fetch_inbox(&self, address: &str, since: Option<DateTime<Utc>>) -> Result<Vec<StoredMail>>;
}

pub type SharedBroker = Arc<dyn BrokerApi>;
pub type SharedMail = Arc<dyn MailApi>;
