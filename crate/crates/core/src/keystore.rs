//! Public keystore and revocation database.
//!
//! At most one record per address. Revocation is requested by address,
//! confirmed with a single-use token mailed to that address, and is
//! permanent: a revoked fingerprint never becomes active again and its
//! address cannot take a new key.

use std::collections::{HashMap, HashSet};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::clock::{chrono_duration, Clock, SystemClock};
use crate::codec;
use crate::crypto::{
    normalize_address, validate_address, verify_revocation, Fingerprint, PublicKey, RevocationCertificate,
};
use crate::error::{MegError, Result};
use crate::journal::{JournalEvent, JournalSink};

pub const DEFAULT_TOKEN_TTL: Duration = Duration::from_secs(24 * 60 * 60);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicKeyRecord {
    pub email: String,
    pub public_key: PublicKey,
    pub fingerprint: Fingerprint,
    pub revoked: bool,
    pub uploaded_at: DateTime<Utc>,
    /// Published once the key is revoked.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revocation_cert: Option<RevocationCertificate>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevocationRequest {
    pub token: String,
    pub email: String,
    pub fingerprint: Fingerprint,
    pub expires_at: DateTime<Utc>,
    #[serde(default)]
    pub used: bool,
}

#[derive(Debug, Clone)]
pub struct KeystoreConfig {
    pub token_ttl: Duration,
}

impl Default for KeystoreConfig {
    fn default() -> Self {
        Self { token_ttl: DEFAULT_TOKEN_TTL }
    }
}

#[derive(Debug)]
struct Entry {
    record: PublicKeyRecord,
    cert: RevocationCertificate,
}

#[derive(Debug, Default)]
struct State {
    by_email: HashMap<String, Entry>,
    revoked: HashSet<Fingerprint>,
    tokens: HashMap<String, RevocationRequest>,
}

impl State {
    fn apply(&mut self, event: &JournalEvent) {
        match event {
            JournalEvent::KeyUploaded { record, cert } => {
                self.by_email.insert(
                    normalize_address(&record.email),
                    Entry { record: record.clone(), cert: cert.clone() },
                );
            }
            JournalEvent::RevocationRequested { request } => {
                self.tokens.insert(request.token.clone(), request.clone());
            }
            JournalEvent::KeyRevoked { token, fingerprint } => {
                if let Some(req) = self.tokens.get_mut(token) {
                    req.used = true;
                }
                self.revoked.insert(*fingerprint);
                for entry in self.by_email.values_mut() {
                    if entry.record.fingerprint == *fingerprint {
                        entry.record.revoked = true;
                        entry.record.revocation_cert = Some(entry.cert.clone());
                    }
                }
            }
            _ => {}
        }
    }
}

#[derive(Debug)]
pub struct Keystore {
    state: Mutex<State>,
    clock: Arc<dyn Clock>,
    journal: Option<Arc<dyn JournalSink>>,
    config: KeystoreConfig,
}

impl Default for Keystore {
    fn default() -> Self {
        Self::new(KeystoreConfig::default(), Arc::new(SystemClock), None)
    }
}

impl Keystore {
    pub fn new(config: KeystoreConfig, clock: Arc<dyn Clock>, journal: Option<Arc<dyn JournalSink>>) -> Self {
        Self { state: Mutex::new(State::default()), clock, journal, config }
    }

    /// Rebuilds state from journal events; events for other stores are skipped.
    pub fn restore(
        events: &[JournalEvent],
        config: KeystoreConfig,
        clock: Arc<dyn Clock>,
        journal: Option<Arc<dyn JournalSink>>,
    ) -> Self {
        let ks = Self::new(config, clock, journal);
        {
            let mut st = ks.state.lock().unwrap();
            for ev in events {
                st.apply(ev);
            }
        }
        ks
    }

    fn commit(&self, st: &mut State, event: JournalEvent) -> Result<()> {
        if let Some(j) = &self.journal {
            j.append(&event)?;
        }
        st.apply(&event);
        Ok(())
    }

    pub fn upload_public_key(&self, email: &str, public_key: &[u8], revocation_cert: &[u8]) -> Result<PublicKeyRecord> {
        let email = email.trim();
        validate_address(email)?;
        let public_key = PublicKey::from_bytes(public_key)?;
        let cert = RevocationCertificate::from_bytes(revocation_cert)?;
        if !verify_revocation(&cert, &public_key) {
            return Err(MegError::CertMismatch);
        }
        let fingerprint = public_key.fingerprint();

        let mut st = self.state.lock().unwrap();
        if st.revoked.contains(&fingerprint) {
            return Err(MegError::RevokedConflict);
        }
        if let Some(existing) = st.by_email.get(&normalize_address(email)) {
            if existing.record.revoked {
                return Err(MegError::RevokedConflict);
            }
        }
        let record = PublicKeyRecord {
            email: email.to_string(),
            public_key,
            fingerprint,
            revoked: false,
            uploaded_at: self.clock.now(),
            revocation_cert: None,
        };
        self.commit(&mut st, JournalEvent::KeyUploaded { record: record.clone(), cert })?;
        Ok(record)
    }

    pub fn lookup_public_key(&self, email: &str) -> Result<PublicKeyRecord> {
        let st = self.state.lock().unwrap();
        st.by_email
            .get(&normalize_address(email))
            .map(|e| e.record.clone())
            .ok_or_else(|| MegError::NotFound(format!("no key for {email}")))
    }

    pub fn lookup_by_fingerprint(&self, fingerprint: &Fingerprint) -> Result<PublicKeyRecord> {
        let st = self.state.lock().unwrap();
        st.by_email
            .values()
            .find(|e| e.record.fingerprint == *fingerprint)
            .map(|e| e.record.clone())
            .ok_or_else(|| MegError::NotFound(format!("no key with fingerprint {fingerprint}")))
    }

    /// Issues a single-use token for revoking the address's active key. The
    /// caller is responsible for mailing it to that address.
    pub fn request_revocation(&self, email: &str) -> Result<RevocationRequest> {
        let mut st = self.state.lock().unwrap();
        let entry = st
            .by_email
            .get(&normalize_address(email))
            .filter(|e| !e.record.revoked)
            .ok_or_else(|| MegError::NotFound(format!("no active key for {email}")))?;
        let mut raw = [0u8; 32];
        rand::RngCore::try_fill_bytes(&mut rand::rngs::OsRng, &mut raw)
            .map_err(|e| MegError::Internal(format!("entropy source failure: {e}")))?;
        let request = RevocationRequest {
            token: codec::encode(&raw),
            email: entry.record.email.clone(),
            fingerprint: entry.record.fingerprint,
            expires_at: self.clock.now() + chrono_duration(self.config.token_ttl),
            used: false,
        };
        self.commit(&mut st, JournalEvent::RevocationRequested { request: request.clone() })?;
        Ok(request)
    }

    pub fn confirm_revocation(&self, token: &str) -> Result<PublicKeyRecord> {
        let mut st = self.state.lock().unwrap();
        let now = self.clock.now();
        let req = st
            .tokens
            .get(token)
            .filter(|r| !r.used && now < r.expires_at)
            .cloned()
            .ok_or(MegError::TokenInvalid)?;
        self.commit(
            &mut st,
            JournalEvent::KeyRevoked { token: token.to_string(), fingerprint: req.fingerprint },
        )?;
        let entry = st
            .by_email
            .values()
            .find(|e| e.record.fingerprint == req.fingerprint)
            .expect("revoked key has a record");
        Ok(entry.record.clone())
    }

    pub fn is_revoked(&self, fingerprint: &Fingerprint) -> bool {
        self.state.lock().unwrap().revoked.contains(fingerprint)
    }

    /// Every record and token as JSON, for at-rest inspection.
    pub fn dump(&self) -> String {
        let st = self.state.lock().unwrap();
        let records: Vec<_> = st.by_email.values().map(|e| (&e.record, &e.cert)).collect();
        let tokens: Vec<_> = st.tokens.values().collect();
        serde_json::json!({ "records": records, "tokens": tokens }).to_string()
    }
}
