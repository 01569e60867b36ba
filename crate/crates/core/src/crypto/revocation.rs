use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::fingerprint::Fingerprint;
use super::keys::PublicKey;
use crate::codec::b64_array;
use crate::error::{MegError, Result};

pub const REVOCATION_VERSION: u32 = 1;

/// Self-signed statement that a key must no longer be trusted.
///
/// The signature is Ed25519 by the revoked key over
/// `fingerprint (32 raw bytes) || "REVOKE"`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevocationCertificate {
    pub version: u32,
    pub fingerprint: Fingerprint,
    pub issued_at: DateTime<Utc>,
    #[serde(with = "b64_array")]
    pub self_signature: [u8; 64],
}

impl RevocationCertificate {
    pub(crate) fn new(fingerprint: Fingerprint, issued_at: DateTime<Utc>, self_signature: [u8; 64]) -> Self {
        Self { version: REVOCATION_VERSION, fingerprint, issued_at, self_signature }
    }

    pub fn signed_bytes(fingerprint: &Fingerprint) -> Vec<u8> {
        let mut msg = fingerprint.as_bytes().to_vec();
        msg.extend_from_slice(b"REVOKE");
        msg
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("certificate serializes")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let cert: Self = serde_json::from_slice(bytes)?;
        if cert.version != REVOCATION_VERSION {
            return Err(MegError::Parse(format!("unsupported certificate version {}", cert.version)));
        }
        Ok(cert)
    }
}

/// True iff the certificate names this key and its self-signature verifies.
pub fn verify_revocation(cert: &RevocationCertificate, public_key: &PublicKey) -> bool {
    cert.version == REVOCATION_VERSION
        && cert.fingerprint == public_key.fingerprint()
        && public_key.verify(&RevocationCertificate::signed_bytes(&cert.fingerprint), &cert.self_signature)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{generate_keypair, UserIdentity};

    fn id(email: &str) -> UserIdentity {
        UserIdentity::new("Test", "User", "+1", email).unwrap()
    }

    #[test]
    fn cert_checks() {
        let (kp, cert) = generate_keypair(&id("a@x"), "pw").unwrap();
        let (other, _) = generate_keypair(&id("b@x"), "pw").unwrap();
        assert!(verify_revocation(&cert, kp.public_key()));
        assert!(!verify_revocation(&cert, other.public_key()));

        let mut flipped = cert.clone();
        flipped.self_signature[10] ^= 0x04;
        assert!(!verify_revocation(&flipped, kp.public_key()));

        // Fingerprint swapped to the other key: signature no longer covers it.
        let mut renamed = cert.clone();
        renamed.fingerprint = other.fingerprint();
        assert!(!verify_revocation(&renamed, other.public_key()));

        let back = RevocationCertificate::from_bytes(&cert.to_bytes()).unwrap();
        assert_eq!(back, cert);
    }

    /// Independent verifier (ed25519-compact) over the documented layout.
    #[test]
    fn cert_verifies_under_independent_ed25519() {
        let (kp, cert) = generate_keypair(&id("oracle@x"), "pw").unwrap();
        let pk_bytes = kp.public_key().to_bytes();
        let oracle_pk = ed25519_compact::PublicKey::from_slice(&pk_bytes[..32]).unwrap();
        let mut msg = kp.fingerprint().as_bytes().to_vec();
        msg.extend_from_slice(b"REVOKE");
        let sig = ed25519_compact::Signature::from_slice(&cert.self_signature).unwrap();
        assert!(oracle_pk.verify(&msg, &sig).is_ok());
        msg[0] ^= 1;
        assert!(oracle_pk.verify(&msg, &sig).is_err());
    }
}
