//! reqwest clients for the server and mail HTTP APIs.

use std::time::Duration;

use async_trait::async_trait;
use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::Serialize;
use uuid::Uuid;

use meg_core::broker::{BrokerTask, Notification, TaskAction, TaskOutcome, TaskView};
use meg_core::crypto::{Fingerprint, TransportFrame};
use meg_core::keystore::PublicKeyRecord;
use meg_core::mailbox::{OutgoingMail, StoredMail};
use meg_core::wire::{
    Ack, CompleteTaskBody, MailReceipt, NotificationBody, PairingBody, RegisterDeviceBody, RevocationConfirmBody,
    RevocationRequestBody, SubmitTaskBody, SubmitTaskResponse, UploadKeyBody,
};
use meg_core::{ErrorBody, MegError, Result};

use crate::api::{BrokerApi, MailApi};

const REQUEST_TIMEOUT: Duration = Duration::from_secs(30);

/// `host:port` or a full URL, normalized to a base URL without trailing slash.
pub fn base_url(addr: &str) -> String {
    let addr = addr.trim().trim_end_matches('/');
    if addr.starts_with("http://") || addr.starts_with("https://") {
        addr.to_string()
    } else {
        format!("http://{addr}")
    }
}

#[derive(Debug, Clone)]
struct Http {
    base: String,
    client: reqwest::Client,
}

impl Http {
    fn new(addr: &str) -> Self {
        let client = reqwest::Client::builder()
            .timeout(REQUEST_TIMEOUT)
            .build()
            .expect("http client builds");
        Self { base: base_url(addr), client }
    }

    async fn send<T: DeserializeOwned>(&self, req: reqwest::RequestBuilder) -> Result<T> {
        let resp = req.send().await.map_err(|e| MegError::ServerUnreachable(format!("{}: {e}", self.base)))?;
        let status = resp.status();
        let bytes = resp
            .bytes()
            .await
            .map_err(|e| MegError::ServerUnreachable(format!("{}: {e}", self.base)))?;
        if status.is_success() {
            return serde_json::from_slice(&bytes).map_err(|e| MegError::Parse(format!("response body: {e}")));
        }
        match serde_json::from_slice::<ErrorBody>(&bytes) {
            Ok(body) => Err(MegError::from_body(&body)),
            Err(_) if status.is_server_error() => Err(MegError::Internal(format!("server returned {status}"))),
            Err(_) => Err(MegError::Parse(format!("server returned {status} with unreadable body"))),
        }
    }

    async fn get<T: DeserializeOwned>(&self, path: &str, query: &[(&str, String)]) -> Result<T> {
        self.send(self.client.get(format!("{}{path}", self.base)).query(query)).await
    }

    async fn post<B: Serialize + ?Sized, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        self.send(self.client.post(format!("{}{path}", self.base)).json(body)).await
    }
}

/// [`BrokerApi`] over HTTP.
#[derive(Debug, Clone)]
pub struct HttpBroker(Http);

impl HttpBroker {
    pub fn new(addr: &str) -> Self {
        Self(Http::new(addr))
    }

    pub fn base_url(&self) -> &str {
        &self.0.base
    }
}

#[async_trait]
impl BrokerApi for HttpBroker {
    async fn register_device(&self, device_id: Uuid) -> Result<()> {
        let _: Ack = self.0.post("/v1/devices", &RegisterDeviceBody { device_id }).await?;
        Ok(())
    }

    async fn record_pairing(&self, device_id: Uuid, client_id: Uuid) -> Result<()> {
        let _: Ack = self.0.post("/v1/pairings", &PairingBody { device_id, client_id }).await?;
        Ok(())
    }

    async fn pairing_of(&self, client_id: Uuid) -> Result<Uuid> {
        let p: PairingBody = self.0.get(&format!("/v1/pairings/{client_id}"), &[]).await?;
        Ok(p.device_id)
    }

    async fn upload_public_key(&self, email: &str, public_key: &[u8], revocation_cert: &[u8]) -> Result<()> {
        let body = UploadKeyBody {
            email: email.to_string(),
            public_key: public_key.to_vec(),
            revocation_cert: revocation_cert.to_vec(),
        };
        let _: Ack = self.0.post("/v1/keys", &body).await?;
        Ok(())
    }

    async fn lookup_public_key(&self, email: &str) -> Result<PublicKeyRecord> {
        self.0.get("/v1/keys", &[("email", email.to_string())]).await
    }

    async fn lookup_by_fingerprint(&self, fingerprint: &Fingerprint) -> Result<PublicKeyRecord> {
        self.0.get("/v1/keys", &[("fingerprint", fingerprint.to_hex())]).await
    }

    async fn request_revocation(&self, email: &str) -> Result<()> {
        let _: Ack = self.0.post("/v1/revocations/request", &RevocationRequestBody { email: email.into() }).await?;
        Ok(())
    }

    async fn confirm_revocation(&self, token: &str) -> Result<()> {
        let _: Ack = self.0.post("/v1/revocations/confirm", &RevocationConfirmBody { token: token.into() }).await?;
        Ok(())
    }

    async fn submit_task(&self, client_id: Uuid, action: TaskAction, frame: TransportFrame) -> Result<Uuid> {
        let r: SubmitTaskResponse = self.0.post("/v1/tasks", &SubmitTaskBody { client_id, action, frame }).await?;
        Ok(r.task_id)
    }

    async fn await_notification(&self, device_id: Uuid, timeout: Duration) -> Result<Notification> {
        let url = format!("{}/v1/notifications", self.0.base);
        let req = self
            .0
            .client
            .get(url)
            .query(&[("device_id", device_id.to_string()), ("timeout_ms", timeout.as_millis().to_string())])
            .timeout(timeout + REQUEST_TIMEOUT);
        let body: NotificationBody = self.0.send(req).await?;
        match body.event.as_str() {
            "pending" => Ok(Notification::Pending { count: body.count }),
            "timeout" => Ok(Notification::Timeout),
            other => Err(MegError::Parse(format!("unknown notification event {other:?}"))),
        }
    }

    async fn fetch_pending(&self, device_id: Uuid) -> Result<Vec<BrokerTask>> {
        self.0.get("/v1/tasks/pending", &[("device_id", device_id.to_string())]).await
    }

    async fn complete_task(&self, task_id: Uuid, outcome: TaskOutcome) -> Result<()> {
        let body = match outcome {
            TaskOutcome::Completed(frame) => CompleteTaskBody { frame: Some(frame), error: None },
            TaskOutcome::Failed(error) => CompleteTaskBody { frame: None, error: Some(error) },
        };
        let _: Ack = self.0.post(&format!("/v1/tasks/{task_id}/complete"), &body).await?;
        Ok(())
    }

    async fn poll_result(&self, task_id: Uuid) -> Result<TaskView> {
        self.0.get(&format!("/v1/tasks/{task_id}"), &[]).await
    }
}

/// [`MailApi`] over HTTP.
#[derive(Debug, Clone)]
pub struct HttpMail(Http);

impl HttpMail {
    pub fn new(addr: &str) -> Self {
        Self(Http::new(addr))
    }

    pub fn base_url(&self) -> &str {
        &self.0.base
    }
}

#[async_trait]
impl MailApi for HttpMail {
    async fn deliver(&self, mail: OutgoingMail) -> Result<MailReceipt> {
        self.0.post("/v1/mail", &mail).await
    }

    async fn fetch_inbox(&self, address: &str, since: Option<DateTime<Utc>>) -> Result<Vec<StoredMail>> {
        let mut q = vec![("to", address.to_string())];
        if let Some(s) = since {
            q.push(("since", s.to_rfc3339_opts(chrono::SecondsFormat::Nanos, true)));
        }
        self.0.get("/v1/mail", &q).await
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_url_forms() {
        assert_eq!(base_url("127.0.0.1:8780"), "http://127.0.0.1:8780");
        assert_eq!(base_url("http://h:1/"), "http://h:1");
    }

    #[tokio::test]
    async fn unreachable_server_is_transient() {
        // Bind then drop to get a port with nothing listening.
        let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let b = HttpBroker::new(&format!("127.0.0.1:{port}"));
        let e = b.poll_result(Uuid::new_v4()).await.unwrap_err();
        assert!(matches!(e, MegError::ServerUnreachable(_)));
        assert!(e.is_transient());
    }
}
