//! Email client plugin.

use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use meg_core::MegError;
use meg_services::client::{qr_text, write_qr_png};
use meg_services::http::base_url;
use meg_services::{
    ClientConfig, ClientOptions, ClientPlugin, Delivery, HttpBroker, HttpMail, OutgoingEmail, ReceivedMail,
};

#[derive(Parser)]
#[command(version, about = "MEG email client: sends and reads mail, with encryption done on the paired phone")]
struct Args {
    #[arg(long, global = true, env = "MEG_SERVER_ADDR", default_value = meg_core::wire::DEFAULT_SERVER_ADDR)]
    server: String,
    #[arg(long, global = true, env = "MEG_MAIL_ADDR", default_value = meg_core::wire::DEFAULT_MAIL_ADDR)]
    mail: String,
    #[arg(long, global = true, env = "MEG_CLIENT_HOME", default_value = meg_cli::DEFAULT_CLIENT_HOME)]
    home: PathBuf,
    /// Account address; needed the first time, then remembered.
    #[arg(long, global = true, env = "MEG_CLIENT_EMAIL")]
    email: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Show the pairing payload for the phone to scan.
    PairQr {
        /// Also write the QR code as a PNG.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Send mail, encrypted unless `--no-encrypt`.
    Send {
        #[arg(long, required = true)]
        to: Vec<String>,
        #[arg(long, default_value = "")]
        subject: String,
        #[arg(long)]
        body_file: PathBuf,
        #[arg(long)]
        no_encrypt: bool,
    },
    /// List the inbox, optionally decrypting MEG mail on the phone.
    Inbox {
        #[arg(long)]
        decrypt: bool,
    },
    /// Invite someone to MEG.
    Invite {
        #[arg(long)]
        to: String,
    },
    /// Ask the server to revoke this account's key; a token is mailed.
    RevokeRequest,
    /// Confirm revocation with the mailed token.
    RevokeConfirm {
        #[arg(long)]
        token: String,
    },
}

fn config(args: &Args) -> anyhow::Result<ClientConfig> {
    match ClientConfig::load(&args.home) {
        Ok(c) => {
            if let Some(e) = &args.email {
                if !c.account_email.eq_ignore_ascii_case(e) {
                    bail!("{} belongs to {}, not {e}", args.home.display(), c.account_email);
                }
            }
            Ok(c)
        }
        Err(MegError::NotFound(_)) => {
            let Some(email) = &args.email else {
                bail!("no client set up in {}; pass --email the first time", args.home.display());
            };
            let c = ClientConfig::new(email, &base_url(&args.server), &base_url(&args.mail))?;
            c.save(&args.home)?;
            Ok(c)
        }
        Err(e) => Err(e.into()),
    }
}

fn print_mail(m: &meg_core::mailbox::StoredMail) {
    println!("From: {}\nTo: {}\nSubject: {}\nDate: {}\nId: {}", m.from, m.to, m.subject(), m.received_at, m.id);
    if m.is_meg() {
        println!("X-MEG: 1");
    }
    println!("\n{}\n", m.body);
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    meg_cli::init_tracing();
    let args = Args::parse();
    let cfg = config(&args)?;
    let plugin = ClientPlugin::new(
        cfg,
        Arc::new(HttpBroker::new(&args.server)),
        Arc::new(HttpMail::new(&args.mail)),
        ClientOptions { home: Some(args.home.clone()), ..ClientOptions::default() },
    );
    match &args.command {
        Command::PairQr { out } => {
            let payload = plugin.init_pairing().await?;
            println!("{}", qr_text(&payload)?);
            println!("{}", payload.to_json());
            if let Some(path) = out {
                write_qr_png(&payload, path)?;
                eprintln!("QR image written to {}", path.display());
            }
        }
        Command::Send { to, subject, body_file, no_encrypt } => {
            let body = std::fs::read_to_string(body_file).with_context(|| format!("reading {}", body_file.display()))?;
            let mail = OutgoingEmail { to: to.clone(), subject: subject.clone(), body, encrypt: !no_encrypt };
            let report = plugin.send_email(&mail).await?;
            match report.delivery {
                Delivery::Sent { message_ids, encrypted } => {
                    let how = if encrypted { "encrypted" } else { "unencrypted" };
                    println!("sent {how} to {} recipient(s)", message_ids.len());
                }
                Delivery::Invited { recipients } => {
                    println!("not sent: {} not on MEG; invitation sent instead", recipients.join(", "));
                }
            }
        }
        Command::Inbox { decrypt } => {
            for m in plugin.inbox().await? {
                if !*decrypt || !m.is_meg() {
                    print_mail(&m);
                    continue;
                }
                match plugin.receive_email(&m).await {
                    Ok(ReceivedMail::Decrypted { from, subject, body, signer_email, signer_fingerprint, .. }) => {
                        println!("From: {from}\nSubject: {subject}");
                        if let (Some(e), Some(f)) = (signer_email, signer_fingerprint) {
                            println!("Signed-By: {e} ({f})");
                        }
                        println!("\n{body}\n");
                    }
                    Ok(ReceivedMail::Plain(m)) => print_mail(&m),
                    Err(e @ (MegError::SignatureInvalid | MegError::TamperDetected | MegError::SenderRevoked)) => {
                        println!("From: {}\nSubject: {}\nWARNING: not shown, authentication failed: {e}\n", m.from, m.subject());
                    }
                    Err(e) => return Err(e.into()),
                }
            }
        }
        Command::Invite { to } => {
            plugin.invite(to).await?;
            println!("invited {to}");
        }
        Command::RevokeRequest => {
            plugin.revoke_my_key().await?;
            println!("revocation token mailed to {}", plugin.account());
        }
        Command::RevokeConfirm { token } => {
            plugin.complete_revocation(token).await?;
            println!("key revoked");
        }
    }
    Ok(())
}
