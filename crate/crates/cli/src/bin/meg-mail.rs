//! Simulated mail provider.

use std::sync::Arc;

use anyhow::Context;
use clap::Parser;

use meg_core::mailbox::Mailbox;
use meg_services::{mail, stack};

#[derive(Parser)]
#[command(version, about = "In-memory mail provider for MEG testing")]
struct Args {
    /// Listen address.
    #[arg(long, env = "MEG_MAIL_ADDR", default_value = meg_core::wire::DEFAULT_MAIL_ADDR)]
    addr: String,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    meg_cli::init_tracing();
    let args = Args::parse();
    let listener = stack::bind(&args.addr).await?;
    let local = listener.local_addr().context("reading bound address")?;
    tracing::info!(addr = %local, "mail simulator listening");
    println!("meg-mail listening on {local}");
    let server = stack::spawn_router(listener, mail::router(Arc::new(Mailbox::default())));
    tokio::select! {
        _ = meg_cli::shutdown_signal() => {}
        _ = server => {}
    }
    Ok(())
}
