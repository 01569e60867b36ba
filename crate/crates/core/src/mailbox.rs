//! In-memory mail provider.
//!
//! Stored mail is immutable and mailboxes only grow; reads hand out
//! copies. Each delivery gets a `received_at` strictly later than the
//! previous one, so `(received_at, id)` ordering equals delivery order.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::clock::{Clock, SystemClock};
use crate::crypto::{normalize_address, validate_address};
use crate::error::{MegError, Result};

/// Header marking a body as an armored MEG envelope.
pub const MEG_HEADER: &str = "X-MEG";
pub const MEG_HEADER_VALUE: &str = "1";

/// Mail as submitted for delivery.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutgoingMail {
    pub to: String,
    pub from: String,
    #[serde(default)]
    pub headers: IndexMap<String, String>,
    pub body: String,
}

impl OutgoingMail {
    pub fn new(to: impl Into<String>, from: impl Into<String>, subject: impl Into<String>, body: impl Into<String>) -> Self {
        let mut headers = IndexMap::new();
        headers.insert("Subject".to_string(), subject.into());
        Self { to: to.into(), from: from.into(), headers, body: body.into() }
    }

    pub fn with_header(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.headers.insert(name.into(), value.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredMail {
    pub id: Uuid,
    pub to: String,
    pub from: String,
    pub headers: IndexMap<String, String>,
    pub body: String,
    pub received_at: DateTime<Utc>,
}

impl StoredMail {
    /// Header lookup, case-insensitive on the name.
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
    }

    pub fn subject(&self) -> &str {
        self.header("Subject").unwrap_or("")
    }

    pub fn is_meg(&self) -> bool {
        self.header(MEG_HEADER) == Some(MEG_HEADER_VALUE)
    }

    /// Header block, blank line, body.
    pub fn to_rfc5322(&self) -> String {
        let mut out = format!("From: {}\r\nTo: {}\r\nDate: {}\r\nMessage-ID: <{}@meg.local>\r\n",
            self.from, self.to, self.received_at.to_rfc2822(), self.id);
        for (k, v) in &self.headers {
            out.push_str(&format!("{k}: {v}\r\n"));
        }
        out.push_str("\r\n");
        out.push_str(&self.body);
        out
    }
}

#[derive(Debug, Default)]
struct State {
    boxes: HashMap<String, Vec<StoredMail>>,
    last: Option<DateTime<Utc>>,
}

#[derive(Debug)]
pub struct Mailbox {
    state: Mutex<State>,
    clock: Arc<dyn Clock>,
}

impl Default for Mailbox {
    fn default() -> Self {
        Self::new(Arc::new(SystemClock))
    }
}

impl Mailbox {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        Self { state: Mutex::new(State::default()), clock }
    }

    pub fn deliver(&self, mail: OutgoingMail) -> Result<StoredMail> {
        if mail.to.trim().is_empty() {
            return Err(MegError::Rejected("empty recipient".into()));
        }
        validate_address(&mail.to).map_err(|_| MegError::Rejected(format!("malformed address {:?}", mail.to)))?;
        validate_address(&mail.from).map_err(|_| MegError::Rejected(format!("malformed sender {:?}", mail.from)))?;
        for (k, v) in &mail.headers {
            let bad_name = k.is_empty() || k.chars().any(|c| c == ':' || c.is_whitespace() || c.is_control());
            if bad_name || v.contains(['\r', '\n']) {
                return Err(MegError::Rejected(format!("malformed header {k:?}")));
            }
        }
        let mut st = self.state.lock().unwrap();
        let mut received_at = self.clock.now();
        if let Some(last) = st.last {
            if received_at <= last {
                received_at = last + chrono::Duration::microseconds(1);
            }
        }
        st.last = Some(received_at);
        let stored = StoredMail {
            id: Uuid::new_v4(),
            to: normalize_address(&mail.to),
            from: normalize_address(&mail.from),
            headers: mail.headers,
            body: mail.body,
            received_at,
        };
        st.boxes.entry(stored.to.clone()).or_default().push(stored.clone());
        Ok(stored)
    }

    /// Mail for `address` received at or after `since`, oldest first.
    pub fn fetch_inbox(&self, address: &str, since: Option<DateTime<Utc>>) -> Vec<StoredMail> {
        let st = self.state.lock().unwrap();
        st.boxes
            .get(&normalize_address(address))
            .map(|b| b.iter().filter(|m| since.map_or(true, |s| m.received_at >= s)).cloned().collect())
            .unwrap_or_default()
    }

    /// Every stored message, for at-rest inspection.
    pub fn all(&self) -> Vec<StoredMail> {
        let st = self.state.lock().unwrap();
        let mut all: Vec<_> = st.boxes.values().flatten().cloned().collect();
        all.sort_by_key(|m| (m.received_at, m.id));
        all
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;

    fn mail(to: &str, body: &str) -> OutgoingMail {
        OutgoingMail::new(to, "alice@example.org", "hello", body)
    }

    #[test]
    fn deliver_then_fetch() {
        let mb = Mailbox::default();
        let stored = mb.deliver(mail("bob@example.org", "one")).unwrap();
        let inbox = mb.fetch_inbox("bob@example.org", None);
        assert_eq!(inbox, vec![stored]);
        assert_eq!(inbox[0].subject(), "hello");
    }

    #[test]
    fn order_preserved_even_with_frozen_clock() {
        let mb = Mailbox::new(Arc::new(ManualClock::default()));
        mb.deliver(mail("bob@example.org", "one")).unwrap();
        mb.deliver(mail("bob@example.org", "two")).unwrap();
        let inbox = mb.fetch_inbox("BOB@example.org", None);
        let bodies: Vec<_> = inbox.iter().map(|m| m.body.as_str()).collect();
        assert_eq!(bodies, ["one", "two"]);
        assert!(inbox[0].received_at < inbox[1].received_at);
    }

    #[test]
    fn bad_addresses_rejected() {
        let mb = Mailbox::default();
        for to in ["", "  ", "nobody", "a@b@c", "x y@z"] {
            assert!(matches!(mb.deliver(mail(to, "x")), Err(MegError::Rejected(_))), "{to:?}");
        }
        let injected = mail("bob@example.org", "x").with_header("Bad", "a\r\nBcc: eve@x");
        assert!(matches!(mb.deliver(injected), Err(MegError::Rejected(_))));
        assert!(mb.all().is_empty());
    }

    #[test]
    fn since_filter_and_repeatable_reads() {
        let clock = Arc::new(ManualClock::default());
        let mb = Mailbox::new(clock.clone());
        mb.deliver(mail("bob@example.org", "old")).unwrap();
        clock.advance(std::time::Duration::from_secs(10));
        let newer = mb.deliver(mail("bob@example.org", "new")).unwrap();
        let since = mb.fetch_inbox("bob@example.org", Some(newer.received_at));
        assert_eq!(since, vec![newer]);
        assert!(mb.fetch_inbox("nobody@example.org", None).is_empty());
        assert_eq!(mb.fetch_inbox("bob@example.org", None), mb.fetch_inbox("bob@example.org", None));
    }

    #[test]
    fn meg_header_detection() {
        let mb = Mailbox::default();
        let m = mb.deliver(mail("bob@example.org", "x").with_header("x-meg", "1")).unwrap();
        assert!(m.is_meg());
        let plain = mb.deliver(mail("bob@example.org", "x")).unwrap();
        assert!(!plain.is_meg());
        let text = m.to_rfc5322();
        assert!(text.contains("x-meg: 1\r\n"));
        assert!(text.ends_with("\r\n\r\nx"));
    }
}
