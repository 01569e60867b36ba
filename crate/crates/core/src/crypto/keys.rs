//! Identity keys: one Ed25519 signing key plus one X25519 agreement key,
//! stored locked under a password-derived key.
//!
//! Canonical public key bytes (fingerprint input, 64 bytes):
//! `ed25519 verifying key (32) || x25519 public key (32)`.
//!
//! Locked private key bytes: `nonce (12) || AES-256-GCM(ed25519 seed || x25519 secret)`,
//! with associated data `"meg-key-v1" || fingerprint || user_id`.

use std::fmt;

use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use hkdf::Hkdf;
use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use sha2::Sha256;
use x25519_dalek::{PublicKey as AgreementPublic, SharedSecret, StaticSecret};
use zeroize::Zeroizing;

use super::aead::{self, NONCE_LEN};
use super::fingerprint::Fingerprint;
use super::identity::UserIdentity;
use super::revocation::RevocationCertificate;
use crate::codec::{self, b64, b64_array};
use crate::error::{MegError, Result};

pub const KDF_ALGORITHM: &str = "pbkdf2-hmac-sha256";
pub const PBKDF2_MIN_ITERATIONS: u32 = 200_000;
pub const KEY_FILE_VERSION: u32 = 1;

const PRIVATE_KEY_INFO: &[u8] = b"meg/private-key/v1";
const STORAGE_KEY_INFO: &[u8] = b"meg/local-storage/v1";
const LOCK_AAD_TAG: &[u8] = b"meg-key-v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KdfParams {
    pub algorithm: String,
    pub iterations: u32,
    #[serde(with = "b64_array")]
    pub salt: [u8; 16],
}

impl KdfParams {
    fn generate() -> Result<Self> {
        Ok(Self {
            algorithm: KDF_ALGORITHM.to_string(),
            iterations: PBKDF2_MIN_ITERATIONS,
            salt: aead::random_bytes()?,
        })
    }

    fn derive_master(&self, password: &str) -> Result<Zeroizing<[u8; 32]>> {
        if self.algorithm != KDF_ALGORITHM {
            return Err(MegError::Parse(format!("unsupported kdf {}", self.algorithm)));
        }
        if self.iterations < PBKDF2_MIN_ITERATIONS {
            return Err(MegError::Parse(format!(
                "kdf iterations {} below minimum {PBKDF2_MIN_ITERATIONS}",
                self.iterations
            )));
        }
        let mut out = Zeroizing::new([0u8; 32]);
        pbkdf2::pbkdf2_hmac::<Sha256>(password.as_bytes(), &self.salt, self.iterations, out.as_mut());
        Ok(out)
    }
}

fn expand(master: &[u8; 32], info: &[u8]) -> Zeroizing<[u8; 32]> {
    let hk = Hkdf::<Sha256>::new(None, master);
    let mut out = Zeroizing::new([0u8; 32]);
    hk.expand(info, out.as_mut()).expect("32 bytes is a valid hkdf length");
    out
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct PublicKey {
    signing: VerifyingKey,
    agreement: AgreementPublic,
}

impl PublicKey {
    pub const LEN: usize = 64;

    pub fn to_bytes(&self) -> [u8; Self::LEN] {
        let mut out = [0u8; Self::LEN];
        out[..32].copy_from_slice(self.signing.as_bytes());
        out[32..].copy_from_slice(self.agreement.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != Self::LEN {
            return Err(MegError::Parse(format!(
                "public key must be {} bytes, got {}",
                Self::LEN,
                bytes.len()
            )));
        }
        let sig: [u8; 32] = bytes[..32].try_into().expect("length checked");
        let agr: [u8; 32] = bytes[32..].try_into().expect("length checked");
        let signing = VerifyingKey::from_bytes(&sig)
            .map_err(|_| MegError::Parse("invalid ed25519 public key".into()))?;
        if signing.is_weak() {
            return Err(MegError::Parse("weak ed25519 public key".into()));
        }
        Ok(Self { signing, agreement: AgreementPublic::from(agr) })
    }

    pub fn fingerprint(&self) -> Fingerprint {
        Fingerprint::of_canonical_bytes(&self.to_bytes())
    }

    pub fn verify(&self, msg: &[u8], signature: &[u8; 64]) -> bool {
        let sig = ed25519_dalek::Signature::from_bytes(signature);
        self.signing.verify_strict(msg, &sig).is_ok()
    }

    pub(crate) fn agreement(&self) -> &AgreementPublic {
        &self.agreement
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", self.fingerprint())
    }
}

impl Serialize for PublicKey {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&codec::encode(&self.to_bytes()))
    }
}

impl<'de> Deserialize<'de> for PublicKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        let bytes = codec::decode(&text).map_err(de::Error::custom)?;
        PublicKey::from_bytes(&bytes).map_err(de::Error::custom)
    }
}

pub fn fingerprint(public_key: &PublicKey) -> Fingerprint {
    public_key.fingerprint()
}

/// Fingerprint of serialized key bytes; malformed keys are a parse error.
pub fn fingerprint_of_bytes(public_key: &[u8]) -> Result<Fingerprint> {
    PublicKey::from_bytes(public_key).map(|k| k.fingerprint())
}

/// A password-locked identity key. This is the only form private key
/// material takes at rest.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "KeyFile", into = "KeyFile")]
pub struct KeyPair {
    user_id: String,
    public_key: PublicKey,
    locked_private: Vec<u8>,
    kdf_params: KdfParams,
    fingerprint: Fingerprint,
}

/// On-disk key file layout.
#[derive(Serialize, Deserialize)]
struct KeyFile {
    version: u32,
    user_id: String,
    public_key: PublicKey,
    #[serde(with = "b64")]
    locked_private: Vec<u8>,
    kdf_params: KdfParams,
    fingerprint: Fingerprint,
}

impl From<KeyPair> for KeyFile {
    fn from(kp: KeyPair) -> Self {
        KeyFile {
            version: KEY_FILE_VERSION,
            user_id: kp.user_id,
            public_key: kp.public_key,
            locked_private: kp.locked_private,
            kdf_params: kp.kdf_params,
            fingerprint: kp.fingerprint,
        }
    }
}

impl TryFrom<KeyFile> for KeyPair {
    type Error = MegError;

    fn try_from(f: KeyFile) -> Result<Self> {
        if f.version != KEY_FILE_VERSION {
            return Err(MegError::Parse(format!("unsupported key file version {}", f.version)));
        }
        if f.public_key.fingerprint() != f.fingerprint {
            return Err(MegError::Parse("fingerprint does not match public key".into()));
        }
        if f.locked_private.len() < NONCE_LEN + aead::TAG_LEN {
            return Err(MegError::Parse("locked private key too short".into()));
        }
        Ok(KeyPair {
            user_id: f.user_id,
            public_key: f.public_key,
            locked_private: f.locked_private,
            kdf_params: f.kdf_params,
            fingerprint: f.fingerprint,
        })
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("user_id", &self.user_id)
            .field("fingerprint", &self.fingerprint)
            .finish_non_exhaustive()
    }
}

fn lock_aad(fpr: &Fingerprint, user_id: &str) -> Vec<u8> {
    let mut aad = Vec::with_capacity(LOCK_AAD_TAG.len() + 32 + user_id.len());
    aad.extend_from_slice(LOCK_AAD_TAG);
    aad.extend_from_slice(fpr.as_bytes());
    aad.extend_from_slice(user_id.as_bytes());
    aad
}

impl KeyPair {
    pub fn user_id(&self) -> &str {
        &self.user_id
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.public_key
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }

    pub fn kdf_params(&self) -> &KdfParams {
        &self.kdf_params
    }

    pub fn locked_private(&self) -> &[u8] {
        &self.locked_private
    }

    pub fn unlock(&self, password: &str) -> Result<UnlockedKey> {
        self.unlock_with_storage_key(password).map(|(k, _)| k)
    }

    /// Unlocks the key and also returns a key for sealing other local
    /// state (the agent's pairing table), derived from the same password.
    pub fn unlock_with_storage_key(&self, password: &str) -> Result<(UnlockedKey, StorageKey)> {
        let master = self.kdf_params.derive_master(password)?;
        let wrap = expand(&master, PRIVATE_KEY_INFO);
        let (nonce, ct) = self.locked_private.split_at(NONCE_LEN);
        let secret = aead::open(&wrap, nonce, ct, &lock_aad(&self.fingerprint, &self.user_id))
            .map(Zeroizing::new)
            .map_err(|_| MegError::AuthFailure)?;
        if secret.len() != 64 {
            return Err(MegError::AuthFailure);
        }
        let key = UnlockedKey::from_secret_bytes(&secret);
        if key.fingerprint != self.fingerprint {
            return Err(MegError::AuthFailure);
        }
        Ok((key, StorageKey(expand(&master, STORAGE_KEY_INFO))))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("key file serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    fn lock(user_id: String, key: &UnlockedKey, password: &str) -> Result<Self> {
        let kdf_params = KdfParams::generate()?;
        let master = kdf_params.derive_master(password)?;
        let wrap = expand(&master, PRIVATE_KEY_INFO);
        let secret = key.secret_bytes();
        let (nonce, ct) = aead::seal(&wrap, secret.as_ref(), &lock_aad(&key.fingerprint, &user_id))?;
        let mut locked_private = nonce.to_vec();
        locked_private.extend_from_slice(&ct);
        Ok(KeyPair {
            user_id,
            public_key: key.public,
            locked_private,
            kdf_params,
            fingerprint: key.fingerprint,
        })
    }
}

/// Generates a fresh identity key locked under `password`, together with
/// its self-signed revocation certificate.
pub fn generate_keypair(
    identity: &UserIdentity,
    password: &str,
) -> Result<(KeyPair, RevocationCertificate)> {
    if password.is_empty() {
        return Err(MegError::InvalidArgument("password must not be empty".into()));
    }
    let seed = Zeroizing::new(aead::random_bytes::<32>()?);
    let agreement = Zeroizing::new(aead::random_bytes::<32>()?);
    let mut secret = Zeroizing::new([0u8; 64]);
    secret[..32].copy_from_slice(seed.as_ref());
    secret[32..].copy_from_slice(agreement.as_ref());
    let key = UnlockedKey::from_secret_bytes(secret.as_ref());
    let cert = key.revocation_certificate(chrono::Utc::now());
    let kp = KeyPair::lock(identity.user_id(), &key, password)?;
    Ok((kp, cert))
}

pub fn unlock_private_key(kp: &KeyPair, password: &str) -> Result<UnlockedKey> {
    kp.unlock(password)
}

/// Decrypted private key, in memory only. Not serializable and not
/// cloneable; key material is zeroized on drop.
pub struct UnlockedKey {
    signing: SigningKey,
    agreement: StaticSecret,
    public: PublicKey,
    fingerprint: Fingerprint,
}

impl UnlockedKey {
    fn from_secret_bytes(secret: &[u8]) -> Self {
        let seed: [u8; 32] = secret[..32].try_into().expect("64-byte secret");
        let agr: [u8; 32] = secret[32..64].try_into().expect("64-byte secret");
        let signing = SigningKey::from_bytes(&seed);
        let agreement = StaticSecret::from(agr);
        let public = PublicKey {
            signing: signing.verifying_key(),
            agreement: AgreementPublic::from(&agreement),
        };
        let fingerprint = public.fingerprint();
        Self { signing, agreement, public, fingerprint }
    }

    fn secret_bytes(&self) -> Zeroizing<[u8; 64]> {
        let mut out = Zeroizing::new([0u8; 64]);
        out[..32].copy_from_slice(&self.signing.to_bytes());
        out[32..].copy_from_slice(self.agreement.as_bytes());
        out
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.public
    }

    pub fn revocation_certificate(&self, issued_at: chrono::DateTime<chrono::Utc>) -> RevocationCertificate {
        let msg = RevocationCertificate::signed_bytes(&self.fingerprint);
        RevocationCertificate::new(self.fingerprint, issued_at, self.sign(&msg))
    }

    pub(crate) fn sign(&self, msg: &[u8]) -> [u8; 64] {
        self.signing.sign(msg).to_bytes()
    }

    pub(crate) fn agree(&self, peer: &AgreementPublic) -> SharedSecret {
        self.agreement.diffie_hellman(peer)
    }

    /// Raw secret scalars, for leak checks in tests only.
    #[cfg(any(test, feature = "test-support"))]
    pub fn export_secret_bytes(&self) -> Zeroizing<[u8; 64]> {
        self.secret_bytes()
    }

    /// Key from raw scalars, skipping the password lock. Lets property
    /// tests draw thousands of keys without paying for PBKDF2.
    #[cfg(any(test, feature = "test-support"))]
    pub fn from_test_secret(secret: &[u8; 64]) -> Self {
        Self::from_secret_bytes(secret)
    }
}

impl fmt::Debug for UnlockedKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UnlockedKey")
            .field("fingerprint", &self.fingerprint)
            .finish_non_exhaustive()
    }
}

/// Symmetric key for sealing local agent state at rest.
pub struct StorageKey(Zeroizing<[u8; 32]>);

impl StorageKey {
    pub fn seal(&self, plaintext: &[u8], label: &str) -> Result<Vec<u8>> {
        let (nonce, ct) = aead::seal(&self.0, plaintext, label.as_bytes())?;
        let mut out = nonce.to_vec();
        out.extend_from_slice(&ct);
        Ok(out)
    }

    pub fn open(&self, sealed: &[u8], label: &str) -> Result<Vec<u8>> {
        if sealed.len() < NONCE_LEN {
            return Err(MegError::TamperDetected);
        }
        let (nonce, ct) = sealed.split_at(NONCE_LEN);
        aead::open(&self.0, nonce, ct, label.as_bytes())
    }
}

impl fmt::Debug for StorageKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("StorageKey(..)")
    }
}
