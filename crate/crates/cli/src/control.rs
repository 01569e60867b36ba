//! Loopback control channel into a running `meg-agent run`.
//!
//! The running agent holds the only unlocked session, so lock, unlock and
//! pair must reach that process. It listens on an ephemeral loopback port
//! and writes the port and a random token to `control.json` in its home.
//! One JSON request line per connection, one JSON response line back.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::task::JoinHandle;
use uuid::Uuid;

use meg_core::{ErrorBody, MegError};
use meg_services::Agent;

pub const CONTROL_FILE: &str = "control.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlFile {
    pub addr: SocketAddr,
    pub token: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case")]
pub enum ControlRequest {
    Lock,
    Unlock { password: String },
    Pair { qr: String },
    Status,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentStatus {
    pub device_id: Uuid,
    pub email: String,
    pub open: bool,
    pub paired_clients: Vec<Uuid>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlResponse {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<AgentStatus>,
}

impl ControlResponse {
    fn from_result(r: meg_core::Result<()>) -> Self {
        match r {
            Ok(()) => Self { ok: true, error: None, status: None },
            Err(e) => Self { ok: false, error: Some(e.to_body()), status: None },
        }
    }

    /// The agent's error, if the request failed.
    pub fn into_result(self) -> Result<Option<AgentStatus>, MegError> {
        match (self.ok, self.error) {
            (true, _) => Ok(self.status),
            (false, Some(e)) => Err(MegError::from_body(&e)),
            (false, None) => Err(MegError::Internal("control request failed".into())),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    token: String,
    request: ControlRequest,
}

pub async fn status_of(agent: &Agent) -> AgentStatus {
    AgentStatus {
        device_id: agent.device_id(),
        email: agent.email().to_string(),
        open: agent.is_open().await,
        paired_clients: agent.paired_clients().await,
    }
}

async fn handle(agent: &Agent, request: ControlRequest) -> ControlResponse {
    match request {
        ControlRequest::Lock => {
            agent.close_app().await;
            ControlResponse::from_result(Ok(()))
        }
        ControlRequest::Unlock { password } => ControlResponse::from_result(agent.open_app(&password).await),
        ControlRequest::Pair { qr } => ControlResponse::from_result(agent.pair(&qr).await),
        ControlRequest::Status => {
            ControlResponse { ok: true, error: None, status: Some(status_of(agent).await) }
        }
    }
}

async fn serve_one(agent: &Agent, token: &str, stream: TcpStream) -> anyhow::Result<()> {
    let (read, mut write) = stream.into_split();
    let mut line = String::new();
    BufReader::new(read).read_line(&mut line).await?;
    let response = match serde_json::from_str::<Envelope>(&line) {
        Ok(env) if env.token == token => handle(agent, env.request).await,
        Ok(_) => ControlResponse::from_result(Err(MegError::AuthFailure)),
        Err(e) => ControlResponse::from_result(Err(MegError::Parse(e.to_string()))),
    };
    let mut out = serde_json::to_vec(&response)?;
    out.push(b'\n');
    write.write_all(&out).await?;
    Ok(())
}

/// A running control listener. Dropping it stops the listener and removes
/// the control file.
pub struct ControlServer {
    path: PathBuf,
    task: JoinHandle<()>,
}

impl Drop for ControlServer {
    fn drop(&mut self) {
        self.task.abort();
        let _ = std::fs::remove_file(&self.path);
    }
}

pub async fn serve(agent: Arc<Agent>, home: &Path) -> anyhow::Result<ControlServer> {
    let listener = TcpListener::bind("127.0.0.1:0").await.context("binding control port")?;
    let mut raw = [0u8; 32];
    rand::rngs::OsRng.fill_bytes(&mut raw);
    let token: String = raw.iter().map(|b| format!("{b:02x}")).collect();
    let file = ControlFile { addr: listener.local_addr()?, token: token.clone() };
    let path = home.join(CONTROL_FILE);
    std::fs::write(&path, serde_json::to_vec_pretty(&file)?).with_context(|| format!("writing {}", path.display()))?;

    let task = tokio::spawn(async move {
        loop {
            let Ok((stream, _)) = listener.accept().await else { continue };
            if let Err(e) = serve_one(&agent, &token, stream).await {
                tracing::warn!(error = %e, "control request failed");
            }
        }
    });
    Ok(ControlServer { path, task })
}

/// `None` when no agent is running for `home`.
pub fn running(home: &Path) -> anyhow::Result<Option<ControlFile>> {
    let path = home.join(CONTROL_FILE);
    match std::fs::read(&path) {
        Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes).with_context(|| format!("reading {}", path.display()))?)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e).with_context(|| format!("reading {}", path.display())),
    }
}

/// The control file of an agent that is actually answering. A file left
/// behind by a killed agent counts as not running.
pub async fn live(home: &Path) -> anyhow::Result<Option<ControlFile>> {
    let Some(file) = running(home)? else { return Ok(None) };
    match send(&file, ControlRequest::Status).await {
        Ok(_) => Ok(Some(file)),
        Err(_) => Ok(None),
    }
}

pub async fn send(file: &ControlFile, request: ControlRequest) -> anyhow::Result<ControlResponse> {
    let stream = match TcpStream::connect(file.addr).await {
        Ok(s) => s,
        Err(e) => bail!("agent control port {} is not answering ({e}); is `meg-agent run` still running?", file.addr),
    };
    let (read, mut write) = stream.into_split();
    let mut line = serde_json::to_vec(&Envelope { token: file.token.clone(), request })?;
    line.push(b'\n');
    write.write_all(&line).await?;
    let mut reply = String::new();
    BufReader::new(read).read_line(&mut reply).await?;
    serde_json::from_str(&reply).context("malformed control response")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_wire_form() {
        let j = serde_json::to_string(&ControlRequest::Pair { qr: "{}".into() }).unwrap();
        assert_eq!(j, r#"{"cmd":"pair","qr":"{}"}"#);
        assert_eq!(serde_json::to_string(&ControlRequest::Lock).unwrap(), r#"{"cmd":"lock"}"#);
    }

    #[test]
    fn response_carries_error_code() {
        let r = ControlResponse::from_result(Err(MegError::DeviceLocked));
        let back: ControlResponse = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back.into_result().unwrap_err(), MegError::DeviceLocked);
    }

    #[test]
    fn no_control_file_means_not_running() {
        let dir = tempfile::tempdir().unwrap();
        assert!(running(dir.path()).unwrap().is_none());
    }
}
