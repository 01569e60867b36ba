use serde::{Deserialize, Serialize};

use crate::error::{MegError, Result};

/// The enrollment form: name, phone and email. The password is taken
/// separately and never stored here.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawIdentity")]
pub struct UserIdentity {
    first_name: String,
    last_name: String,
    phone: String,
    email: String,
}

#[derive(Deserialize)]
struct RawIdentity {
    first_name: String,
    last_name: String,
    phone: String,
    email: String,
}

impl TryFrom<RawIdentity> for UserIdentity {
    type Error = MegError;

    fn try_from(raw: RawIdentity) -> Result<Self> {
        UserIdentity::new(raw.first_name, raw.last_name, raw.phone, raw.email)
    }
}

impl UserIdentity {
    pub fn new(
        first_name: impl Into<String>,
        last_name: impl Into<String>,
        phone: impl Into<String>,
        email: impl Into<String>,
    ) -> Result<Self> {
        let first_name = first_name.into().trim().to_string();
        let last_name = last_name.into().trim().to_string();
        let phone = phone.into().trim().to_string();
        let email = email.into().trim().to_string();
        if first_name.is_empty() || last_name.is_empty() {
            return Err(MegError::InvalidArgument("first and last name are required".into()));
        }
        validate_address(&email)?;
        Ok(Self { first_name, last_name, phone, email })
    }

    pub fn first_name(&self) -> &str {
        &self.first_name
    }

    pub fn last_name(&self) -> &str {
        &self.last_name
    }

    pub fn phone(&self) -> &str {
        &self.phone
    }

    pub fn email(&self) -> &str {
        &self.email
    }

    /// `First Last <email>`, the user id bound into the key file.
    pub fn user_id(&self) -> String {
        format!("{} {} <{}>", self.first_name, self.last_name, self.email)
    }
}

/// Minimal addr-spec check: one `@`, non-empty local part and domain, no
/// whitespace.
pub fn validate_address(addr: &str) -> Result<()> {
    let bad = || MegError::InvalidArgument(format!("malformed email address {addr:?}"));
    if addr.is_empty() || addr.chars().any(char::is_whitespace) {
        return Err(bad());
    }
    let mut parts = addr.split('@');
    match (parts.next(), parts.next(), parts.next()) {
        (Some(local), Some(domain), None) if !local.is_empty() && !domain.is_empty() => Ok(()),
        _ => Err(bad()),
    }
}

/// Canonical mailbox key: addresses compare case-insensitively.
pub fn normalize_address(addr: &str) -> String {
    addr.trim().to_ascii_lowercase()
}
