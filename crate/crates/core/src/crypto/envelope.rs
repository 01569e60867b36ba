//! Multi-recipient sign-then-encrypt envelope.
//!
//! A random 32-byte session key encrypts the body with AES-256-GCM. The
//! body plaintext is `sender fingerprint (32) || Ed25519 signature (64) || message`,
//! so the signature sits under the encryption. The signature covers
//! `"meg-signature-v1" || sender fingerprint || u32be recipient count ||
//! recipient fingerprints || message`.
//!
//! Each recipient entry wraps the session key:
//! `ephemeral x25519 public (32) || nonce (12) || AES-256-GCM(session key) (48)`.
//! The wrapping key is HKDF-SHA-256 over the ephemeral agreement with
//! salt `ephemeral public || recipient agreement public` and info
//! `"meg/wrap/v1" || recipient fingerprint`.

use std::collections::HashSet;

use hkdf::Hkdf;
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use x25519_dalek::{EphemeralSecret, PublicKey as AgreementPublic};
use zeroize::Zeroizing;

use super::aead::{self, NONCE_LEN, TAG_LEN};
use super::armor;
use super::fingerprint::Fingerprint;
use super::keys::{PublicKey, UnlockedKey};
use crate::codec::{b64, b64_array};
use crate::error::{MegError, Result};

pub const ENVELOPE_VERSION: u32 = 1;
pub const WRAPPED_KEY_LEN: usize = 32 + NONCE_LEN + 32 + TAG_LEN;
const SIGNATURE_LEN: usize = 64;

const SIGNATURE_TAG: &[u8] = b"meg-signature-v1";
const HEADER_TAG: &[u8] = b"meg-envelope-v1";
const WRAP_INFO: &[u8] = b"meg/wrap/v1";
const WRAP_AAD: &[u8] = b"meg-wrap-v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecipientEntry {
    pub fpr: Fingerprint,
    #[serde(with = "b64")]
    pub wrapped_key: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawEnvelope")]
pub struct MegEnvelope {
    pub version: u32,
    pub sender_fpr: Fingerprint,
    pub recipients: Vec<RecipientEntry>,
    #[serde(with = "b64_array")]
    pub nonce: [u8; NONCE_LEN],
    #[serde(with = "b64")]
    pub ciphertext: Vec<u8>,
}

#[derive(Deserialize)]
struct RawEnvelope {
    version: u32,
    sender_fpr: Fingerprint,
    recipients: Vec<RecipientEntry>,
    #[serde(with = "b64_array")]
    nonce: [u8; NONCE_LEN],
    #[serde(with = "b64")]
    ciphertext: Vec<u8>,
}

impl TryFrom<RawEnvelope> for MegEnvelope {
    type Error = MegError;

    fn try_from(raw: RawEnvelope) -> Result<Self> {
        if raw.version != ENVELOPE_VERSION {
            return Err(MegError::Parse(format!("unsupported envelope version {}", raw.version)));
        }
        if raw.recipients.is_empty() {
            return Err(MegError::Parse("envelope has no recipients".into()));
        }
        let mut seen = HashSet::new();
        for r in &raw.recipients {
            if r.wrapped_key.len() != WRAPPED_KEY_LEN {
                return Err(MegError::Parse("wrapped key has wrong length".into()));
            }
            if !seen.insert(r.fpr) {
                return Err(MegError::Parse("duplicate recipient".into()));
            }
        }
        if raw.ciphertext.len() < 32 + SIGNATURE_LEN + TAG_LEN {
            return Err(MegError::Parse("ciphertext too short".into()));
        }
        Ok(MegEnvelope {
            version: raw.version,
            sender_fpr: raw.sender_fpr,
            recipients: raw.recipients,
            nonce: raw.nonce,
            ciphertext: raw.ciphertext,
        })
    }
}

impl MegEnvelope {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("envelope serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn armor(&self) -> String {
        armor::armor(self.to_json().as_bytes())
    }

    pub fn from_armor(text: &str) -> Result<Self> {
        let json = armor::dearmor(text)?;
        let text = std::str::from_utf8(&json).map_err(|_| MegError::Parse("envelope is not utf-8".into()))?;
        Self::from_json(text)
    }

    pub fn recipient_fingerprints(&self) -> impl Iterator<Item = &Fingerprint> {
        self.recipients.iter().map(|r| &r.fpr)
    }

    fn header_aad(&self) -> Vec<u8> {
        let mut aad = HEADER_TAG.to_vec();
        aad.extend_from_slice(&self.version.to_be_bytes());
        aad.extend_from_slice(self.sender_fpr.as_bytes());
        aad.extend_from_slice(&(self.recipients.len() as u32).to_be_bytes());
        for r in &self.recipients {
            aad.extend_from_slice(r.fpr.as_bytes());
        }
        aad
    }
}

fn signed_message<'a>(
    sender: &Fingerprint,
    recipients: impl ExactSizeIterator<Item = &'a Fingerprint>,
    plaintext: &[u8],
) -> Vec<u8> {
    let mut msg = SIGNATURE_TAG.to_vec();
    msg.extend_from_slice(sender.as_bytes());
    msg.extend_from_slice(&(recipients.len() as u32).to_be_bytes());
    for fpr in recipients {
        msg.extend_from_slice(fpr.as_bytes());
    }
    msg.extend_from_slice(plaintext);
    msg
}

fn wrapping_key(
    shared: &[u8; 32],
    ephemeral: &AgreementPublic,
    recipient: &AgreementPublic,
    fpr: &Fingerprint,
) -> Zeroizing<[u8; 32]> {
    let mut salt = [0u8; 64];
    salt[..32].copy_from_slice(ephemeral.as_bytes());
    salt[32..].copy_from_slice(recipient.as_bytes());
    let mut info = WRAP_INFO.to_vec();
    info.extend_from_slice(fpr.as_bytes());
    let hk = Hkdf::<Sha256>::new(Some(&salt), shared);
    let mut out = Zeroizing::new([0u8; 32]);
    hk.expand(&info, out.as_mut()).expect("32 bytes is a valid hkdf length");
    out
}

fn wrap_aad(fpr: &Fingerprint) -> Vec<u8> {
    let mut aad = WRAP_AAD.to_vec();
    aad.extend_from_slice(fpr.as_bytes());
    aad
}

fn wrap_session_key(session: &[u8; 32], recipient: &PublicKey) -> Result<RecipientEntry> {
    let fpr = recipient.fingerprint();
    let eph_secret = EphemeralSecret::random_from_rng(rand::rngs::OsRng);
    let eph_public = AgreementPublic::from(&eph_secret);
    let shared = eph_secret.diffie_hellman(recipient.agreement());
    if !shared.was_contributory() {
        return Err(MegError::InvalidArgument(format!("recipient key {fpr} is not usable")));
    }
    let kek = wrapping_key(shared.as_bytes(), &eph_public, recipient.agreement(), &fpr);
    let (nonce, ct) = aead::seal(&kek, session, &wrap_aad(&fpr))?;
    let mut wrapped_key = Vec::with_capacity(WRAPPED_KEY_LEN);
    wrapped_key.extend_from_slice(eph_public.as_bytes());
    wrapped_key.extend_from_slice(&nonce);
    wrapped_key.extend_from_slice(&ct);
    Ok(RecipientEntry { fpr, wrapped_key })
}

fn unwrap_session_key(entry: &RecipientEntry, key: &UnlockedKey) -> Result<Zeroizing<[u8; 32]>> {
    if entry.wrapped_key.len() != WRAPPED_KEY_LEN {
        return Err(MegError::TamperDetected);
    }
    let eph: [u8; 32] = entry.wrapped_key[..32].try_into().expect("length checked");
    let eph_public = AgreementPublic::from(eph);
    let shared = key.agree(&eph_public);
    if !shared.was_contributory() {
        return Err(MegError::TamperDetected);
    }
    let kek = wrapping_key(shared.as_bytes(), &eph_public, key.public_key().agreement(), &entry.fpr);
    let nonce = &entry.wrapped_key[32..32 + NONCE_LEN];
    let ct = &entry.wrapped_key[32 + NONCE_LEN..];
    let session = Zeroizing::new(aead::open(&kek, nonce, ct, &wrap_aad(&entry.fpr))?);
    let arr: [u8; 32] = session.as_slice().try_into().map_err(|_| MegError::TamperDetected)?;
    Ok(Zeroizing::new(arr))
}

/// Signs `plaintext` with the sender key and encrypts it to every
/// recipient. The sender is always added as a recipient.
pub fn sign_and_encrypt(plaintext: &[u8], sender: &UnlockedKey, recipients: &[PublicKey]) -> Result<MegEnvelope> {
    if recipients.is_empty() {
        return Err(MegError::InvalidArgument("at least one recipient is required".into()));
    }
    let mut seen = HashSet::new();
    let mut keys: Vec<&PublicKey> = Vec::with_capacity(recipients.len() + 1);
    for pk in recipients.iter().chain(std::iter::once(sender.public_key())) {
        if seen.insert(pk.fingerprint()) {
            keys.push(pk);
        }
    }

    let sender_fpr = sender.fingerprint();
    let fprs: Vec<Fingerprint> = keys.iter().map(|k| k.fingerprint()).collect();
    let signature = sender.sign(&signed_message(&sender_fpr, fprs.iter(), plaintext));

    let session = Zeroizing::new(aead::random_bytes::<32>()?);
    let entries = keys
        .iter()
        .map(|pk| wrap_session_key(&session, pk))
        .collect::<Result<Vec<_>>>()?;

    let mut inner = Zeroizing::new(Vec::with_capacity(32 + SIGNATURE_LEN + plaintext.len()));
    inner.extend_from_slice(sender_fpr.as_bytes());
    inner.extend_from_slice(&signature);
    inner.extend_from_slice(plaintext);

    let mut env = MegEnvelope {
        version: ENVELOPE_VERSION,
        sender_fpr,
        recipients: entries,
        nonce: [0u8; NONCE_LEN],
        ciphertext: Vec::new(),
    };
    let (nonce, ct) = aead::seal(&session, &inner, &env.header_aad())?;
    env.nonce = nonce;
    env.ciphertext = ct;
    Ok(env)
}

/// Decrypts and verifies. Plaintext is only returned when the AEAD tag and
/// the sender signature both check out; otherwise it is zeroized and an
/// error returned.
pub fn verify_and_decrypt(env: &MegEnvelope, recipient: &UnlockedKey, sender_pub: &PublicKey) -> Result<Vec<u8>> {
    let me = recipient.fingerprint();
    let entry = env
        .recipients
        .iter()
        .find(|r| r.fpr == me)
        .ok_or(MegError::NotARecipient)?;
    let session = unwrap_session_key(entry, recipient)?;
    let inner = Zeroizing::new(aead::open(&session, &env.nonce, &env.ciphertext, &env.header_aad())?);
    if inner.len() < 32 + SIGNATURE_LEN {
        return Err(MegError::TamperDetected);
    }
    let (inner_fpr, rest) = inner.split_at(32);
    let (signature, message) = rest.split_at(SIGNATURE_LEN);

    let sender_fpr = sender_pub.fingerprint();
    if inner_fpr != env.sender_fpr.as_bytes() || env.sender_fpr != sender_fpr {
        return Err(MegError::SignatureInvalid);
    }
    let signature: [u8; SIGNATURE_LEN] = signature.try_into().expect("split at 64");
    let signed = Zeroizing::new(signed_message(&sender_fpr, env.recipients.iter().map(|r| &r.fpr), message));
    if !sender_pub.verify(&signed, &signature) {
        return Err(MegError::SignatureInvalid);
    }
    Ok(message.to_vec())
}

/// Forgery helpers for adversarial tests.
#[cfg(any(test, feature = "test-support"))]
pub mod test_support {
    use super::*;

    /// Re-signs an envelope's body under a different key while keeping the
    /// original sender fingerprint: a forged envelope that decrypts fine but
    /// whose signature is not the claimed sender's.
    pub fn forge_with_key(
        plaintext: &[u8],
        claimed_sender: Fingerprint,
        signer: &UnlockedKey,
        recipients: &[PublicKey],
    ) -> MegEnvelope {
        let fprs: Vec<Fingerprint> = recipients.iter().map(|k| k.fingerprint()).collect();
        let signature = signer.sign(&signed_message(&claimed_sender, fprs.iter(), plaintext));
        seal_signed(plaintext, claimed_sender, signature, recipients)
    }

    /// The sender's genuine envelope with bit `bit % 512` of the signature
    /// flipped before encryption. Decrypts cleanly, fails verification.
    /// As with [`forge_with_key`], `recipients` is used exactly as given.
    pub fn with_corrupted_signature(
        plaintext: &[u8],
        sender: &UnlockedKey,
        recipients: &[PublicKey],
        bit: usize,
    ) -> MegEnvelope {
        let fprs: Vec<Fingerprint> = recipients.iter().map(|k| k.fingerprint()).collect();
        let mut signature = sender.sign(&signed_message(&sender.fingerprint(), fprs.iter(), plaintext));
        let bit = bit % (SIGNATURE_LEN * 8);
        signature[bit / 8] ^= 1 << (bit % 8);
        seal_signed(plaintext, sender.fingerprint(), signature, recipients)
    }

    fn seal_signed(
        plaintext: &[u8],
        claimed_sender: Fingerprint,
        signature: [u8; SIGNATURE_LEN],
        recipients: &[PublicKey],
    ) -> MegEnvelope {
        let session = aead::random_bytes::<32>().unwrap();
        let entries = recipients.iter().map(|pk| wrap_session_key(&session, pk).unwrap()).collect();
        let mut inner = claimed_sender.as_bytes().to_vec();
        inner.extend_from_slice(&signature);
        inner.extend_from_slice(plaintext);
        let mut env = MegEnvelope {
            version: ENVELOPE_VERSION,
            sender_fpr: claimed_sender,
            recipients: entries,
            nonce: [0u8; NONCE_LEN],
            ciphertext: Vec::new(),
        };
        let (nonce, ct) = aead::seal(&session, &inner, &env.header_aad()).unwrap();
        env.nonce = nonce;
        env.ciphertext = ct;
        env
    }
}
