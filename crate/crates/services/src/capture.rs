//! A [`BrokerApi`] wrapper that records every outbound request in its
//! wire (JSON) form. Tests use it to see exactly which bytes a component
//! sends.

use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use serde_json::json;
use uuid::Uuid;

use meg_core::broker::{BrokerTask, Notification, TaskAction, TaskOutcome, TaskView};
use meg_core::crypto::{Fingerprint, TransportFrame};
use meg_core::keystore::PublicKeyRecord;
use meg_core::{codec, Result};

use crate::api::{BrokerApi, SharedBroker};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CapturedCall {
    pub op: &'static str,
    pub body: Vec<u8>,
}

#[derive(Clone)]
pub struct CapturingBroker {
    inner: SharedBroker,
    calls: Arc<Mutex<Vec<CapturedCall>>>,
}

impl CapturingBroker {
    pub fn new(inner: SharedBroker) -> Self {
        Self { inner, calls: Arc::default() }
    }

    pub fn calls(&self) -> Vec<CapturedCall> {
        self.calls.lock().unwrap().clone()
    }

    /// Every captured request body, concatenated.
    pub fn outbound_bytes(&self) -> Vec<u8> {
        self.calls.lock().unwrap().iter().flat_map(|c| c.body.iter().copied()).collect()
    }

    fn record(&self, op: &'static str, body: serde_json::Value) {
        let body = serde_json::to_vec(&body).expect("json value serializes");
        self.calls.lock().unwrap().push(CapturedCall { op, body });
    }
}

#[async_trait]
impl BrokerApi for CapturingBroker {
    async fn register_device(&self, device_id: Uuid) -> Result<()> {
        self.record("register_device", json!({ "device_id": device_id }));
        self.inner.register_device(device_id).await
    }

    async fn record_pairing(&self, device_id: Uuid, client_id: Uuid) -> Result<()> {
        self.record("record_pairing", json!({ "device_id": device_id, "client_id": client_id }));
        self.inner.record_pairing(device_id, client_id).await
    }

    async fn pairing_of(&self, client_id: Uuid) -> Result<Uuid> {
        self.record("pairing_of", json!({ "client_id": client_id }));
        self.inner.pairing_of(client_id).await
    }

    async fn upload_public_key(&self, email: &str, public_key: &[u8], revocation_cert: &[u8]) -> Result<()> {
        self.record(
            "upload_public_key",
            json!({
                "email": email,
                "public_key": codec::encode(public_key),
                "revocation_cert": codec::encode(revocation_cert),
            }),
        );
        self.inner.upload_public_key(email, public_key, revocation_cert).await
    }

    async fn lookup_public_key(&self, email: &str) -> Result<PublicKeyRecord> {
        self.record("lookup_public_key", json!({ "email": email }));
        self.inner.lookup_public_key(email).await
    }

    async fn lookup_by_fingerprint(&self, fingerprint: &Fingerprint) -> Result<PublicKeyRecord> {
        self.record("lookup_by_fingerprint", json!({ "fingerprint": fingerprint }));
        self.inner.lookup_by_fingerprint(fingerprint).await
    }

    async fn request_revocation(&self, email: &str) -> Result<()> {
        self.record("request_revocation", json!({ "email": email }));
        self.inner.request_revocation(email).await
    }

    async fn confirm_revocation(&self, token: &str) -> Result<()> {
        self.record("confirm_revocation", json!({ "token": token }));
        self.inner.confirm_revocation(token).await
    }

    async fn submit_task(&self, client_id: Uuid, action: TaskAction, frame: TransportFrame) -> Result<Uuid> {
        self.record("submit_task", json!({ "client_id": client_id, "action": action, "frame": frame }));
        self.inner.submit_task(client_id, action, frame).await
    }

    async fn await_notification(&self, device_id: Uuid, timeout: Duration) -> Result<Notification> {
        self.record(
            "await_notification",
            json!({ "device_id": device_id, "timeout_ms": timeout.as_millis() as u64 }),
        );
        self.inner.await_notification(device_id, timeout).await
    }

    async fn fetch_pending(&self, device_id: Uuid) -> Result<Vec<BrokerTask>> {
        self.record("fetch_pending", json!({ "device_id": device_id }));
        self.inner.fetch_pending(device_id).await
    }

    async fn complete_task(&self, task_id: Uuid, outcome: TaskOutcome) -> Result<()> {
        let body = match &outcome {
            TaskOutcome::Completed(f) => json!({ "task_id": task_id, "frame": f }),
            TaskOutcome::Failed(e) => json!({ "task_id": task_id, "error": e }),
        };
        self.record("complete_task", body);
        self.inner.complete_task(task_id, outcome).await
    }

    async fn poll_result(&self, task_id: Uuid) -> Result<TaskView> {
        self.record("poll_result", json!({ "task_id": task_id }));
        self.inner.poll_result(task_id).await
    }
}
