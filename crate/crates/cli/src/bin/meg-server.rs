//! Keystore and task broker.

use std::sync::Arc;

use anyhow::Context;
use clap::Parser;

use meg_core::clock::SystemClock;
use meg_services::{server, stack, HttpMail, MegServer, ServerConfig, SharedMail};

#[derive(Parser)]
#[command(
    version,
    about = "MEG keystore and task broker",
    long_about = "MEG keystore and task broker.\n\nAlso reads MEG_TASK_TTL_S, MEG_DELIVERY_TIMEOUT_S, MEG_TOKEN_TTL_S and MEG_JOURNAL_PATH."
)]
struct Args {
    /// Listen address.
    #[arg(long, env = "MEG_SERVER_ADDR", default_value = meg_core::wire::DEFAULT_SERVER_ADDR)]
    addr: String,
    /// Mail provider used to send revocation tokens.
    #[arg(long, env = "MEG_MAIL_ADDR", default_value = meg_core::wire::DEFAULT_MAIL_ADDR)]
    mail: String,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    meg_cli::init_tracing();
    let args = Args::parse();
    let config = ServerConfig::from_env()?;
    let mail: SharedMail = Arc::new(HttpMail::new(&args.mail));
    let meg = Arc::new(MegServer::open(config, Arc::new(SystemClock), mail).context("opening server state")?);
    let listener = stack::bind(&args.addr).await?;
    let local = listener.local_addr().context("reading bound address")?;
    tracing::info!(addr = %local, mail = %args.mail, "server listening");
    println!("meg-server listening on {local}");
    let task = stack::spawn_router(listener, server::router(meg));
    tokio::select! {
        _ = meg_cli::shutdown_signal() => {}
        _ = task => {}
    }
    Ok(())
}
