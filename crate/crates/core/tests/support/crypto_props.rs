//! Randomized crypto properties, shared by the core test suite and the
//! acceptance run. Keys are drawn from raw scalars so each case gets fresh
//! keys without paying for PBKDF2.

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use serde_json::json;
use sha2::{Digest, Sha256};

use meg_core::codec;
use meg_core::crypto::test_support::{forge_with_key, with_corrupted_signature};
use meg_core::crypto::{
    fingerprint_of_bytes, sign_and_encrypt, verify_and_decrypt, Fingerprint, KeyPair, MegEnvelope, PublicKey,
    UnlockedKey, KDF_ALGORITHM, KEY_FILE_VERSION, PBKDF2_MIN_ITERATIONS,
};
use meg_core::MegError;

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() })
}

fn run<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String>
where
    S::Value: std::fmt::Debug,
{
    runner(cases).run(&strategy, test).map_err(|e| e.to_string())
}

fn secret() -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(any::<u8>(), 64)
}

fn key(secret: &[u8]) -> UnlockedKey {
    UnlockedKey::from_test_secret(secret.try_into().expect("64-byte secret"))
}

fn fail(e: MegError) -> TestCaseError {
    TestCaseError::fail(e.to_string())
}

fn check_serialization(env: &MegEnvelope) -> Result<(), TestCaseError> {
    let json = env.to_json();
    let back = MegEnvelope::from_json(&json).map_err(fail)?;
    prop_assert_eq!(&back, env);
    prop_assert_eq!(back.to_json(), json);
    let armored = env.armor();
    let back = MegEnvelope::from_armor(&armored).map_err(fail)?;
    prop_assert_eq!(&back, env);
    prop_assert_eq!(back.armor(), armored);
    Ok(())
}

/// Every recipient and the sender recover the plaintext; an outsider is not
/// a recipient; the wrong sender key never verifies; serialized forms
/// roundtrip byte for byte.
pub fn roundtrip_multi_recipient(cases: u32) -> Result<(), String> {
    let strategy = (
        prop::collection::vec(any::<u8>(), 0..1024),
        secret(),
        prop::collection::vec(secret(), 1..5),
        secret(),
    );
    run(cases, strategy, |(plaintext, sender, recipients, outsider)| {
        let sender = key(&sender);
        let recipients: Vec<UnlockedKey> = recipients.iter().map(|s| key(s)).collect();
        let outsider = key(&outsider);
        let pubs: Vec<PublicKey> = recipients.iter().map(|k| *k.public_key()).collect();
        let env = sign_and_encrypt(&plaintext, &sender, &pubs).map_err(fail)?;

        let mut expected: Vec<Fingerprint> = pubs.iter().map(|p| p.fingerprint()).collect();
        expected.push(sender.fingerprint());
        expected.sort();
        expected.dedup();
        let mut listed: Vec<Fingerprint> = env.recipient_fingerprints().copied().collect();
        listed.sort();
        prop_assert_eq!(listed, expected);

        for reader in recipients.iter().chain(std::iter::once(&sender)) {
            let got = verify_and_decrypt(&env, reader, sender.public_key()).map_err(fail)?;
            prop_assert_eq!(&got, &plaintext);
        }
        if !env.recipient_fingerprints().any(|f| *f == outsider.fingerprint()) {
            prop_assert_eq!(
                verify_and_decrypt(&env, &outsider, sender.public_key()).unwrap_err(),
                MegError::NotARecipient
            );
        }
        if outsider.fingerprint() != sender.fingerprint() {
            prop_assert_eq!(
                verify_and_decrypt(&env, &recipients[0], outsider.public_key()).unwrap_err(),
                MegError::SignatureInvalid
            );
        }
        check_serialization(&env)
    })
}

#[derive(Debug, Clone, Copy)]
pub enum Forgery {
    /// Signed by another key while claiming the sender's fingerprint.
    WrongSigner,
    /// Sender's own signature with one bit flipped.
    BadSignature,
    CiphertextFlip,
    NonceFlip,
    WrappedKeyFlip,
    /// Sender fingerprint in the header swapped for another key's.
    HeaderSender,
}

pub fn forgery_kind() -> impl Strategy<Value = Forgery> {
    prop_oneof![
        Just(Forgery::WrongSigner),
        Just(Forgery::BadSignature),
        Just(Forgery::CiphertextFlip),
        Just(Forgery::NonceFlip),
        Just(Forgery::WrappedKeyFlip),
        Just(Forgery::HeaderSender),
    ]
}

/// Builds a forged or tampered envelope from `sender` to `recipient`.
/// `pos` and `bit` choose the damaged byte.
pub fn forge(
    kind: Forgery,
    plaintext: &[u8],
    sender: &UnlockedKey,
    mallory: &UnlockedKey,
    recipient: &PublicKey,
    pos: usize,
    bit: u8,
) -> MegEnvelope {
    let mask = 1u8 << (bit % 8);
    let genuine = || sign_and_encrypt(plaintext, sender, &[*recipient]).expect("sealing succeeds");
    match kind {
        Forgery::WrongSigner => forge_with_key(plaintext, sender.fingerprint(), mallory, &[*recipient]),
        Forgery::BadSignature => with_corrupted_signature(plaintext, sender, &[*recipient], (pos % 64) * 8 + bit as usize),
        Forgery::CiphertextFlip => {
            let mut env = genuine();
            let at = pos % env.ciphertext.len();
            env.ciphertext[at] ^= mask;
            env
        }
        Forgery::NonceFlip => {
            let mut env = genuine();
            let at = pos % env.nonce.len();
            env.nonce[at] ^= mask;
            env
        }
        Forgery::WrappedKeyFlip => {
            let mut env = genuine();
            let fpr = recipient.fingerprint();
            let entry = env.recipients.iter_mut().find(|r| r.fpr == fpr).expect("recipient listed");
            let at = pos % entry.wrapped_key.len();
            entry.wrapped_key[at] ^= mask;
            env
        }
        Forgery::HeaderSender => {
            let mut env = genuine();
            env.sender_fpr = mallory.fingerprint();
            env
        }
    }
}

/// The error each forgery must produce when checked against the claimed
/// sender's key.
pub fn expected_error(kind: Forgery) -> MegError {
    match kind {
        Forgery::WrongSigner | Forgery::BadSignature => MegError::SignatureInvalid,
        _ => MegError::TamperDetected,
    }
}

/// No forged or tampered envelope yields plaintext.
pub fn forgeries_rejected(cases: u32) -> Result<(), String> {
    let strategy = (
        prop::collection::vec(any::<u8>(), 1..512),
        secret(),
        secret(),
        secret(),
        forgery_kind(),
        any::<usize>(),
        0u8..8,
    );
    run(cases, strategy, |(plaintext, sender, mallory, recipient, kind, pos, bit)| {
        let (sender, mallory, recipient) = (key(&sender), key(&mallory), key(&recipient));
        // A "forger" holding the sender's signing half is the sender.
        prop_assume!(sender.public_key().to_bytes()[..32] != mallory.public_key().to_bytes()[..32]);
        let env = forge(kind, &plaintext, &sender, &mallory, recipient.public_key(), pos, bit);
        let got = verify_and_decrypt(&env, &recipient, sender.public_key());
        prop_assert_eq!(got, Err(expected_error(kind)));
        Ok(())
    })
}

/// Fingerprints are SHA-256 of the canonical 64 public key bytes, stable
/// across re-derivation and distinct for distinct keys.
pub fn fingerprint_determinism(cases: u32) -> Result<(), String> {
    run(cases, (secret(), secret()), |(a, b)| {
        let k = key(&a);
        let bytes = k.public_key().to_bytes();
        let oracle: [u8; 32] = Sha256::digest(bytes).into();
        prop_assert_eq!(*k.fingerprint().as_bytes(), oracle);
        prop_assert_eq!(key(&a).fingerprint(), k.fingerprint());
        prop_assert_eq!(fingerprint_of_bytes(&bytes).map_err(fail)?, k.fingerprint());
        prop_assert_eq!(PublicKey::from_bytes(&bytes).map_err(fail)?.fingerprint(), k.fingerprint());
        prop_assert_eq!(k.fingerprint().to_hex().parse::<Fingerprint>().ok(), Some(k.fingerprint()));
        if a != b {
            prop_assert_ne!(key(&b).fingerprint(), k.fingerprint());
        }
        Ok(())
    })
}

/// Arbitrary well-formed key files parse, and re-serialize to the same
/// document; a second roundtrip is byte-exact.
pub fn key_file_roundtrip(cases: u32) -> Result<(), String> {
    let strategy = (
        secret(),
        "\\PC{0,40}",
        prop::collection::vec(any::<u8>(), 28..160),
        PBKDF2_MIN_ITERATIONS..4 * PBKDF2_MIN_ITERATIONS,
        prop::collection::vec(any::<u8>(), 16),
    );
    run(cases, strategy, |(secret, user_id, locked, iterations, salt)| {
        let public = *key(&secret).public_key();
        let doc = json!({
            "version": KEY_FILE_VERSION,
            "user_id": user_id,
            "public_key": codec::encode(&public.to_bytes()),
            "locked_private": codec::encode(&locked),
            "kdf_params": {
                "algorithm": KDF_ALGORITHM,
                "iterations": iterations,
                "salt": codec::encode(&salt),
            },
            "fingerprint": public.fingerprint().to_hex(),
        });
        let kp = KeyPair::from_json(&doc.to_string()).map_err(fail)?;
        prop_assert_eq!(kp.public_key(), &public);
        prop_assert_eq!(kp.locked_private(), &locked[..]);

        let text = kp.to_json();
        let reparsed: serde_json::Value = serde_json::from_str(&text).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(reparsed, doc);
        let again = KeyPair::from_json(&text).map_err(fail)?;
        prop_assert_eq!(&again, &kp);
        prop_assert_eq!(again.to_json(), text);
        Ok(())
    })
}
