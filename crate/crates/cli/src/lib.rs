//! Shared plumbing for the MEG command-line tools.

pub mod control;

use std::path::{Path, PathBuf};

use anyhow::Context;

use meg_core::wire::{DEFAULT_MAIL_ADDR, DEFAULT_SERVER_ADDR};

pub const DEFAULT_AGENT_HOME: &str = ".meg-agent";
pub const DEFAULT_CLIENT_HOME: &str = ".meg-client";
/// Read instead of prompting when set. Meant for scripts and tests.
pub const PASSWORD_ENV: &str = "MEG_AGENT_PASSWORD";

pub fn env_or(key: &str, default: &str) -> String {
    std::env::var(key).ok().filter(|v| !v.is_empty()).unwrap_or_else(|| default.to_string())
}

pub fn server_addr() -> String {
    env_or("MEG_SERVER_ADDR", DEFAULT_SERVER_ADDR)
}

pub fn mail_addr() -> String {
    env_or("MEG_MAIL_ADDR", DEFAULT_MAIL_ADDR)
}

pub fn agent_home() -> PathBuf {
    PathBuf::from(env_or("MEG_AGENT_HOME", DEFAULT_AGENT_HOME))
}

pub fn client_home() -> PathBuf {
    PathBuf::from(env_or("MEG_CLIENT_HOME", DEFAULT_CLIENT_HOME))
}

pub fn read_password(prompt: &str) -> anyhow::Result<String> {
    if let Ok(pw) = std::env::var(PASSWORD_ENV) {
        return Ok(pw);
    }
    rpassword::prompt_password(prompt).context("reading password")
}

const PNG_MAGIC: &[u8] = b"\x89PNG";

/// The QR payload text from `--qr`, which is either a file or the payload
/// itself. Image files are refused: only the JSON payload is accepted. A
/// file holding saved `pair-qr` output yields its JSON line.
pub fn qr_argument(arg: &str) -> anyhow::Result<String> {
    let path = Path::new(arg);
    if !arg.trim_start().starts_with('{') && path.is_file() {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        if bytes.starts_with(PNG_MAGIC) {
            anyhow::bail!(
                "{} is a QR image; pass the JSON payload printed by `meg-client pair-qr` (or a file holding it)",
                path.display()
            );
        }
        let text = String::from_utf8(bytes).context("QR payload file is not UTF-8")?;
        let json = text.lines().rev().find(|l| l.trim_start().starts_with('{'));
        return Ok(json.map(str::to_string).unwrap_or(text));
    }
    Ok(arg.to_string())
}

/// Resolves on Ctrl-C, or SIGTERM on Unix.
pub async fn shutdown_signal() {
    #[cfg(unix)]
    {
        let mut term = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate())
            .expect("installing SIGTERM handler");
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    let _ = tokio::signal::ctrl_c().await;
}

/// Logs to stderr, filtered by `RUST_LOG` (default `info`).
pub fn init_tracing() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}
