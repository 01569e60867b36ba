//! Binding and running the two HTTP services.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::Router;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

use meg_core::clock::SystemClock;
use meg_core::mailbox::Mailbox;
use meg_core::{MegError, Result};

use crate::api::SharedMail;
use crate::http::HttpMail;
use crate::mail;
use crate::server::{self, MegServer, ServerConfig};

pub async fn bind(addr: &str) -> Result<TcpListener> {
    TcpListener::bind(addr)
        .await
        .map_err(|e| MegError::Internal(format!("bind {addr}: {e}")))
}

/// Serves `router` until the task is aborted.
pub fn spawn_router(listener: TcpListener, router: Router) -> JoinHandle<()> {
    tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, router).await {
            tracing::error!(error = %e, "server stopped");
        }
    })
}

/// Mail provider and MEG server on ephemeral loopback ports, in this
/// process. Both stop when the stack is dropped.
pub struct LocalStack {
    pub server: Arc<MegServer>,
    pub mailbox: Arc<Mailbox>,
    pub server_addr: SocketAddr,
    pub mail_addr: SocketAddr,
    tasks: Vec<JoinHandle<()>>,
}

impl LocalStack {
    pub async fn start(config: ServerConfig) -> Result<Self> {
        let mailbox = Arc::new(Mailbox::default());
        let mail_listener = bind("127.0.0.1:0").await?;
        let mail_addr = mail_listener.local_addr().map_err(|e| MegError::Internal(e.to_string()))?;
        let mail_task = spawn_router(mail_listener, mail::router(mailbox.clone()));

        // The server reaches the mail provider over HTTP, as a separate
        // deployment would.
        let mail_client: SharedMail = Arc::new(HttpMail::new(&mail_addr.to_string()));
        let server = Arc::new(MegServer::open(config, Arc::new(SystemClock), mail_client)?);
        let listener = bind("127.0.0.1:0").await?;
        let server_addr = listener.local_addr().map_err(|e| MegError::Internal(e.to_string()))?;
        let server_task = spawn_router(listener, server::router(server.clone()));

        Ok(Self { server, mailbox, server_addr, mail_addr, tasks: vec![mail_task, server_task] })
    }

    pub fn server_url(&self) -> String {
        format!("http://{}", self.server_addr)
    }

    pub fn mail_url(&self) -> String {
        format!("http://{}", self.mail_addr)
    }
}

impl Drop for LocalStack {
    fn drop(&mut self) {
        for t in &self.tasks {
            t.abort();
        }
    }
}
