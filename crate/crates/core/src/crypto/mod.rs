//! Keys, signatures, envelopes and transport frames.
//!
//! Algorithm suite: Ed25519 signatures, X25519 key agreement, AES-256-GCM
//! for both envelope bodies and transport frames, HKDF-SHA-256 for key
//! wrapping, PBKDF2-HMAC-SHA-256 for password-locked keys, SHA-256
//! fingerprints.

mod aead;
pub mod armor;
mod envelope;
mod fingerprint;
mod identity;
mod keys;
mod revocation;
mod transport;

pub use envelope::{sign_and_encrypt, verify_and_decrypt, MegEnvelope, RecipientEntry, ENVELOPE_VERSION, WRAPPED_KEY_LEN};
pub use fingerprint::Fingerprint;
pub use identity::{normalize_address, validate_address, UserIdentity};
pub use keys::{
    fingerprint, fingerprint_of_bytes, generate_keypair, unlock_private_key, KdfParams, KeyPair, PublicKey,
    StorageKey, UnlockedKey, KDF_ALGORITHM, KEY_FILE_VERSION, PBKDF2_MIN_ITERATIONS,
};
pub use revocation::{verify_revocation, RevocationCertificate};
pub use transport::{
    encode_key, generate_transport_key, transport_decrypt, transport_encrypt, FrameAction, TransportFrame,
    TransportKey, FRAME_VERSION,
};

#[cfg(any(test, feature = "test-support"))]
pub use envelope::test_support;
