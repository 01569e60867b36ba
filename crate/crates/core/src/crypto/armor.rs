use base64::engine::general_purpose::STANDARD;
use base64::Engine;

use crate::error::{MegError, Result};

pub const BEGIN: &str = "-----BEGIN MEG MESSAGE-----";
pub const END: &str = "-----END MEG MESSAGE-----";
const LINE_WIDTH: usize = 64;

pub fn armor(bytes: &[u8]) -> String {
    let encoded = STANDARD.encode(bytes);
    let mut out = String::with_capacity(encoded.len() + encoded.len() / LINE_WIDTH + BEGIN.len() + END.len() + 4);
    out.push_str(BEGIN);
    out.push('\n');
    for chunk in encoded.as_bytes().chunks(LINE_WIDTH) {
        out.push_str(std::str::from_utf8(chunk).expect("base64 is ascii"));
        out.push('\n');
    }
    out.push_str(END);
    out.push('\n');
    out
}

/// Extracts the first armored block found in `text`.
pub fn dearmor(text: &str) -> Result<Vec<u8>> {
    let start = text
        .find(BEGIN)
        .ok_or_else(|| MegError::Parse("missing armor header".into()))?
        + BEGIN.len();
    let len = text[start..]
        .find(END)
        .ok_or_else(|| MegError::Parse("missing armor footer".into()))?;
    let body: String = text[start..start + len].chars().filter(|c| !c.is_whitespace()).collect();
    STANDARD
        .decode(body)
        .map_err(|e| MegError::Parse(format!("armor body: {e}")))
}

pub fn is_armored(text: &str) -> bool {
    text.contains(BEGIN) && text.contains(END)
}
