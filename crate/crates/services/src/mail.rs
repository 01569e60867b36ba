//! HTTP front for the simulated mail provider.

use std::sync::Arc;

use async_trait::async_trait;
use axum::extract::{Query, State};
use axum::routing::post;
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::Deserialize;

use meg_core::mailbox::{Mailbox, OutgoingMail, StoredMail};
use meg_core::wire::MailReceipt;
use meg_core::Result;

use crate::api::MailApi;
use crate::server::{parse_rejection, ApiError};

/// In-process [`MailApi`].
#[derive(Debug, Clone, Default)]
pub struct LocalMail(pub Arc<Mailbox>);

#[async_trait]
impl MailApi for LocalMail {
    async fn deliver(&self, mail: OutgoingMail) -> Result<MailReceipt> {
        let stored = self.0.deliver(mail)?;
        Ok(MailReceipt { id: stored.id, received_at: stored.received_at })
    }

    async fn fetch_inbox(&self, address: &str, since: Option<DateTime<Utc>>) -> Result<Vec<StoredMail>> {
        Ok(self.0.fetch_inbox(address, since))
    }
}

#[derive(Debug, Deserialize)]
struct InboxQuery {
    to: String,
    since: Option<DateTime<Utc>>,
}

pub fn router(mailbox: Arc<Mailbox>) -> Router {
    Router::new().route("/v1/mail", post(deliver).get(fetch)).with_state(mailbox)
}

async fn deliver(
    State(mb): State<Arc<Mailbox>>,
    b: std::result::Result<Json<OutgoingMail>, axum::extract::rejection::JsonRejection>,
) -> std::result::Result<Json<MailReceipt>, ApiError> {
    let Json(mail) = b.map_err(parse_rejection)?;
    let stored = mb.deliver(mail)?;
    tracing::info!(id = %stored.id, to = %stored.to, "mail stored");
    Ok(Json(MailReceipt { id: stored.id, received_at: stored.received_at }))
}

async fn fetch(
    State(mb): State<Arc<Mailbox>>,
    q: std::result::Result<Query<InboxQuery>, axum::extract::rejection::QueryRejection>,
) -> std::result::Result<Json<Vec<StoredMail>>, ApiError> {
    let Query(q) = q.map_err(parse_rejection)?;
    Ok(Json(mb.fetch_inbox(&q.to, q.since)))
}
