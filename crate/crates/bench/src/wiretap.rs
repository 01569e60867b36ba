//! Client-side wire timestamps for broker traffic.
//!
//! Records when each task's submit request left and when the poll that
//! returned its terminal state came back. The window between the two is
//! what a packet capture on the client host would attribute to the server
//! and the phone together.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use async_trait::async_trait;
use uuid::Uuid;

use meg_core::broker::{BrokerTask, Notification, TaskAction, TaskOutcome, TaskView};
use meg_core::crypto::{Fingerprint, TransportFrame};
use meg_core::keystore::PublicKeyRecord;
use meg_core::Result;
use meg_services::{BrokerApi, SharedBroker};

#[derive(Debug, Default)]
struct Marks {
    sent: HashMap<Uuid, Instant>,
    done: HashMap<Uuid, Instant>,
}

#[derive(Clone)]
pub struct WireTap {
    inner: SharedBroker,
    marks: Arc<Mutex<Marks>>,
}

impl WireTap {
    pub fn new(inner: SharedBroker) -> Self {
        Self { inner, marks: Arc::default() }
    }

    /// Submit sent to terminal result received, if both were seen.
    pub fn window(&self, task_id: &Uuid) -> Option<Duration> {
        let m = self.marks.lock().unwrap();
        Some(m.done.get(task_id)?.duration_since(*m.sent.get(task_id)?))
    }
}

#[async_trait]
impl BrokerApi for WireTap {
    async fn register_device(&self, device_id: Uuid) -> Result<()> {
        self.inner.register_device(device_id).await
    }

    async fn record_pairing(&self, device_id: Uuid, client_id: Uuid) -> Result<()> {
        self.inner.record_pairing(device_id, client_id).await
    }

    async fn pairing_of(&self, client_id: Uuid) -> Result<Uuid> {
        self.inner.pairing_of(client_id).await
    }

    async fn upload_public_key(&self, email: &str, public_key: &[u8], revocation_cert: &[u8]) -> Result<()> {
        self.inner.upload_public_key(email, public_key, revocation_cert).await
    }

    async fn lookup_public_key(&self, email: &str) -> Result<PublicKeyRecord> {
        self.inner.lookup_public_key(email).await
    }

    async fn lookup_by_fingerprint(&self, fingerprint: &Fingerprint) -> Result<PublicKeyRecord> {
        self.inner.lookup_by_fingerprint(fingerprint).await
    }

    async fn request_revocation(&self, email: &str) -> Result<()> {
        self.inner.request_revocation(email).await
    }

    async fn confirm_revocation(&self, token: &str) -> Result<()> {
        self.inner.confirm_revocation(token).await
    }

    async fn submit_task(&self, client_id: Uuid, action: TaskAction, frame: TransportFrame) -> Result<Uuid> {
        let sent = Instant::now();
        let id = self.inner.submit_task(client_id, action, frame).await?;
        self.marks.lock().unwrap().sent.insert(id, sent);
        Ok(id)
    }

    async fn await_notification(&self, device_id: Uuid, timeout: Duration) -> Result<Notification> {
        self.inner.await_notification(device_id, timeout).await
    }

    async fn fetch_pending(&self, device_id: Uuid) -> Result<Vec<BrokerTask>> {
        self.inner.fetch_pending(device_id).await
    }

    async fn complete_task(&self, task_id: Uuid, outcome: TaskOutcome) -> Result<()> {
        self.inner.complete_task(task_id, outcome).await
    }

    async fn poll_result(&self, task_id: Uuid) -> Result<TaskView> {
        let view = self.inner.poll_result(task_id).await?;
        if view.status.is_terminal() {
            self.marks.lock().unwrap().done.entry(task_id).or_insert_with(Instant::now);
        }
        Ok(view)
    }
}
