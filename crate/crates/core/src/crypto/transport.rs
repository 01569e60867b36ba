//! AES-256-GCM framing for client <-> phone traffic relayed by the broker.
//!
//! Associated data: `"meg-transport-v1" || 0x00 || client_id (16 raw bytes) || action`.

use std::fmt;
use std::str::FromStr;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use uuid::Uuid;
use zeroize::Zeroizing;

use super::aead::{self, NONCE_LEN};
use crate::codec::{self, b64, b64_array};
use crate::error::{MegError, Result};

pub const FRAME_VERSION: u32 = 1;
const AAD_TAG: &[u8] = b"meg-transport-v1";

/// Label bound into each frame as associated data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrameAction {
    Encrypt,
    Decrypt,
    Result,
}

impl FrameAction {
    pub fn as_str(&self) -> &'static str {
        match self {
            FrameAction::Encrypt => "encrypt",
            FrameAction::Decrypt => "decrypt",
            FrameAction::Result => "result",
        }
    }
}

impl FromStr for FrameAction {
    type Err = MegError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "encrypt" => Ok(FrameAction::Encrypt),
            "decrypt" => Ok(FrameAction::Decrypt),
            "result" => Ok(FrameAction::Result),
            other => Err(MegError::InvalidArgument(format!("unknown frame action {other:?}"))),
        }
    }
}

impl fmt::Display for FrameAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Symmetric key shared between one client plugin and one phone.
#[derive(Clone, PartialEq, Eq)]
pub struct TransportKey {
    key: Zeroizing<[u8; 32]>,
    client_id: Uuid,
}

impl TransportKey {
    pub fn from_bytes(client_id: Uuid, key: &[u8]) -> Result<Self> {
        let key: [u8; 32] = key
            .try_into()
            .map_err(|_| MegError::InvalidArgument(format!("transport key must be 32 bytes, got {}", key.len())))?;
        Ok(Self { key: Zeroizing::new(key), client_id })
    }

    pub fn client_id(&self) -> Uuid {
        self.client_id
    }

    pub fn key_bytes(&self) -> &[u8; 32] {
        &self.key
    }
}

impl fmt::Debug for TransportKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TransportKey").field("client_id", &self.client_id).finish_non_exhaustive()
    }
}

#[derive(Serialize, Deserialize)]
struct TransportKeyRepr {
    client_id: Uuid,
    #[serde(with = "b64")]
    key: Vec<u8>,
}

impl Serialize for TransportKey {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        TransportKeyRepr { client_id: self.client_id, key: self.key.to_vec() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for TransportKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = TransportKeyRepr::deserialize(d)?;
        let bytes = Zeroizing::new(repr.key);
        TransportKey::from_bytes(repr.client_id, &bytes).map_err(de::Error::custom)
    }
}

pub fn generate_transport_key() -> Result<TransportKey> {
    Ok(TransportKey {
        key: Zeroizing::new(aead::random_bytes()?),
        client_id: Uuid::new_v4(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransportFrame {
    pub version: u32,
    pub client_id: Uuid,
    #[serde(with = "b64_array")]
    pub nonce: [u8; NONCE_LEN],
    #[serde(with = "b64")]
    pub ciphertext: Vec<u8>,
    pub aad_tag: String,
}

impl TransportFrame {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("frame serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Short text form for logs: never includes payload bytes.
    pub fn describe(&self) -> String {
        format!("frame(client={}, action={}, {} bytes)", self.client_id, self.aad_tag, self.ciphertext.len())
    }
}

fn frame_aad(client_id: &Uuid, action: FrameAction) -> Vec<u8> {
    let mut aad = AAD_TAG.to_vec();
    aad.push(0);
    aad.extend_from_slice(client_id.as_bytes());
    aad.extend_from_slice(action.as_str().as_bytes());
    aad
}

pub fn transport_encrypt(payload: &[u8], key: &TransportKey, action: FrameAction) -> Result<TransportFrame> {
    let (nonce, ciphertext) = aead::seal(&key.key, payload, &frame_aad(&key.client_id, action))?;
    Ok(TransportFrame {
        version: FRAME_VERSION,
        client_id: key.client_id,
        nonce,
        ciphertext,
        aad_tag: action.as_str().to_string(),
    })
}

/// Opens a frame. Wrong key, wrong action or any modified byte all yield
/// [`MegError::TamperDetected`].
pub fn transport_decrypt(frame: &TransportFrame, key: &TransportKey, action: FrameAction) -> Result<Vec<u8>> {
    if frame.version != FRAME_VERSION
        || frame.client_id != key.client_id
        || frame.aad_tag != action.as_str()
    {
        return Err(MegError::TamperDetected);
    }
    aead::open(&key.key, &frame.nonce, &frame.ciphertext, &frame_aad(&frame.client_id, action))
}

/// base64url text of the raw key, as carried in the pairing QR payload.
pub fn encode_key(key: &TransportKey) -> String {
    codec::encode(key.key.as_ref())
}
