//! Phone gateway agent.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use meg_cli::control::{self, ControlRequest};
use meg_core::crypto::UserIdentity;
use meg_services::{http::base_url, Agent, AgentOptions, HttpBroker, RunLimits, SharedBroker};

#[derive(Parser)]
#[command(version, about = "MEG phone agent: holds the private key and does all signing and decryption")]
struct Args {
    /// MEG server address.
    #[arg(long, global = true, env = "MEG_SERVER_ADDR", default_value = meg_core::wire::DEFAULT_SERVER_ADDR)]
    server: String,
    /// Directory for the key, device and pairing files.
    #[arg(long, global = true, env = "MEG_AGENT_HOME", default_value = meg_cli::DEFAULT_AGENT_HOME)]
    home: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a key pair, publish the public key and register this device.
    Enroll {
        #[arg(long)]
        first: String,
        #[arg(long)]
        last: String,
        #[arg(long)]
        phone: String,
        #[arg(long)]
        email: String,
    },
    /// Accept a client's pairing payload (JSON text or a file holding it).
    Pair {
        #[arg(long)]
        qr: String,
    },
    /// Unlock and process tasks until interrupted.
    Run {
        /// Stop after this many tasks.
        #[arg(long)]
        max_tasks: Option<usize>,
        /// Stop after this many idle seconds.
        #[arg(long)]
        max_idle_s: Option<u64>,
    },
    /// Close the app on the running agent: the key leaves memory.
    Lock,
    /// Log back in on the running agent.
    Unlock,
    /// Show device, account and pairing state.
    Status,
}

fn options(args: &Args) -> AgentOptions {
    AgentOptions::new(base_url(&args.server)).with_home(&args.home)
}

fn broker(args: &Args) -> SharedBroker {
    Arc::new(HttpBroker::new(&args.server))
}

async fn via_control(args: &Args, request: ControlRequest) -> anyhow::Result<Option<control::AgentStatus>> {
    let Some(file) = control::live(&args.home).await? else {
        bail!("no running agent for {}; start `meg-agent run` first", args.home.display());
    };
    Ok(control::send(&file, request).await?.into_result()?)
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    meg_cli::init_tracing();
    let args = Args::parse();
    match &args.command {
        Command::Enroll { first, last, phone, email } => {
            let identity = UserIdentity::new(first, last, phone, email)?;
            let password = meg_cli::read_password("New MEG password: ")?;
            let agent = Agent::enroll(&identity, &password, broker(&args), options(&args)).await?;
            println!("enrolled {} as device {}", agent.email(), agent.device_id());
            println!("fingerprint {}", agent.public_key().await.fingerprint());
        }
        Command::Pair { qr } => {
            let text = meg_cli::qr_argument(qr)?;
            if control::live(&args.home).await?.is_some() {
                via_control(&args, ControlRequest::Pair { qr: text }).await?;
            } else {
                let agent = Agent::load(broker(&args), options(&args))?;
                agent.open_app(&meg_cli::read_password("MEG password: ")?).await?;
                agent.pair(&text).await?;
            }
            println!("paired");
        }
        Command::Run { max_tasks, max_idle_s } => {
            if control::live(&args.home).await?.is_some() {
                bail!("an agent is already running for {}", args.home.display());
            }
            let agent = Arc::new(Agent::load(broker(&args), options(&args))?);
            let password = meg_cli::read_password("MEG password: ")?;
            // Listen before unlocking so a concurrent `pair` reaches this
            // process instead of editing the pairing file behind its back.
            let _control = control::serve(agent.clone(), &args.home).await?;
            agent.open_app(&password).await?;
            println!("agent {} running as device {}", agent.email(), agent.device_id());
            let limits = RunLimits { max_tasks: *max_tasks, max_idle: max_idle_s.map(Duration::from_secs) };
            let runner = agent.clone();
            let mut work = tokio::spawn(async move { runner.run_loop(limits).await });
            let n = tokio::select! {
                r = &mut work => r.context("agent loop panicked")??,
                _ = meg_cli::shutdown_signal() => {
                    agent.shutdown();
                    work.await.context("agent loop panicked")??
                }
            };
            println!("processed {n} tasks");
        }
        Command::Lock => {
            via_control(&args, ControlRequest::Lock).await?;
            println!("locked");
        }
        Command::Unlock => {
            let password = meg_cli::read_password("MEG password: ")?;
            via_control(&args, ControlRequest::Unlock { password }).await?;
            println!("unlocked");
        }
        Command::Status => {
            let status = match control::live(&args.home).await? {
                Some(file) => control::send(&file, ControlRequest::Status).await?.into_result()?,
                None => None,
            };
            match status {
                Some(s) => println!("{}", serde_json::to_string_pretty(&s)?),
                None => {
                    let agent = Agent::load(broker(&args), options(&args))?;
                    println!("{} device {} (not running)", agent.email(), agent.device_id());
                }
            }
        }
    }
    Ok(())
}
