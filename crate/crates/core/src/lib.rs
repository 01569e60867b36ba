//! Core of the MEG mobile encryption gateway: cryptography, the public
//! keystore with email-confirmed revocation, the client/device task
//! broker, the simulated mail provider and benchmark statistics.
//!
//! Everything here is transport-agnostic; `meg-services` puts HTTP in
//! front of it.

pub mod broker;
pub mod clock;
pub mod codec;
pub mod crypto;
pub mod error;
pub mod journal;
pub mod keystore;
pub mod mailbox;
pub mod report;
pub mod stats;
pub mod wire;

pub use error::{ErrorBody, MegError, Result};
