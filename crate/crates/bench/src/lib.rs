//! Timed end-to-end encryption and decryption trials.
//!
//! Each trial runs through the real path: client, MEG server over HTTP,
//! phone agent and back. Time is split three ways. The phone reports its
//! own span; the client reports its total and its submit-to-result wait;
//! server time is the wait with the phone span removed.

pub mod wiretap;

use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;
use uuid::Uuid;

use meg_core::crypto::UserIdentity;
use meg_core::report::{BenchEnvironment, BenchReport, TaskKind, TrialTiming};
use meg_core::MegError;
use meg_services::{
    Agent, AgentOptions, ClientConfig, ClientOptions, ClientPlugin, Delivery, HttpBroker, HttpMail, LocalStack,
    OutgoingEmail, ReceivedMail, RunLimits, ServerConfig, SharedBroker, SharedMail,
};

pub use wiretap::WireTap;

/// Message used for every trial, repeated or cut to the requested length.
pub const PRESET_EMAIL: &str = "Hi Bob, this is the preset benchmark message. It stands in for an \
ordinary short email: a greeting, a couple of sentences about a meeting next Tuesday at ten in the \
small conference room, a request to bring the printed budget draft, and a sign-off. Nothing in it is \
special, which is the point. Thanks, and see you then. Alice";

const PASSWORD: &str = "benchmark password";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid benchmark options: {0}")]
    Options(String),
    #[error("setup failed: {0}")]
    Setup(#[source] MegError),
    #[error("{kind} trial {trial} failed (task {task}): {source}", task = fmt_task(.task_id))]
    Trial {
        kind: &'static str,
        trial: usize,
        task_id: Option<Uuid>,
        #[source]
        source: MegError,
    },
}

fn fmt_task(id: &Option<Uuid>) -> String {
    id.map(|u| u.to_string()).unwrap_or_else(|| "none".into())
}

/// The first `len` characters of the preset, cycled as needed.
pub fn preset_message(len: usize) -> String {
    PRESET_EMAIL.chars().cycle().take(len).collect()
}

#[derive(Debug, Clone)]
pub enum Target {
    /// Mail provider and server started in this process on loopback.
    SelfHosted,
    /// Already running services.
    External { server_url: String, mail_url: String },
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub n: usize,
    pub message_len: usize,
    pub target: Target,
}

impl BenchOptions {
    pub fn new(n: usize, message_len: usize) -> Self {
        Self { n, message_len, target: Target::SelfHosted }
    }
}

#[derive(Debug, Clone)]
pub struct BenchRun {
    pub report: BenchReport,
    /// Task ids in trial order, encryption first.
    pub task_ids: Vec<Uuid>,
    /// Largest gap between server time from the client's own timer and
    /// server time from the wire timestamps, over all trials.
    pub attribution_max_dev_s: f64,
    /// Largest gap between a trial's measured total and its component sum.
    pub sum_max_dev_s: f64,
}

struct Party {
    agent: Arc<Agent>,
    client: ClientPlugin,
    tap: WireTap,
    loop_handle: tokio::task::JoinHandle<()>,
}

impl Drop for Party {
    fn drop(&mut self) {
        self.agent.shutdown();
        self.loop_handle.abort();
    }
}

async fn party(
    email: &str,
    server_url: &str,
    mail_url: &str,
    mail: SharedMail,
) -> Result<Party, MegError> {
    let broker: SharedBroker = Arc::new(HttpBroker::new(server_url));
    let local = email.split('@').next().unwrap_or("user");
    let identity = UserIdentity::new(local, "Bench", "+15550100", email)?;
    let agent = Arc::new(Agent::enroll(&identity, PASSWORD, broker.clone(), AgentOptions::new(server_url)).await?);

    let tap = WireTap::new(broker);
    let config = ClientConfig::new(email, server_url, mail_url)?;
    let client = ClientPlugin::new(config, Arc::new(tap.clone()), mail, ClientOptions::default());
    let qr = client.init_pairing().await?;
    agent.pair(&qr.to_json()).await?;
    if !client.confirm_pairing().await? {
        return Err(MegError::Internal("pairing not confirmed".into()));
    }

    let runner = agent.clone();
    let loop_handle = tokio::spawn(async move {
        if let Err(e) = runner.run_loop(RunLimits::default()).await {
            tracing::error!(error = %e, "agent loop stopped");
        }
    });
    Ok(Party { agent, client, tap, loop_handle })
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

/// Runs `n` encryption then `n` decryption trials of a `message_len`
/// character email against self-hosted services.
pub async fn run_benchmark(n: usize, message_len: usize) -> Result<BenchRun, BenchError> {
    run_benchmark_with(&BenchOptions::new(n, message_len)).await
}

pub async fn run_benchmark_with(options: &BenchOptions) -> Result<BenchRun, BenchError> {
    if options.n == 0 {
        return Err(BenchError::Options("n must be at least 1".into()));
    }
    if options.message_len == 0 {
        return Err(BenchError::Options("message length must be at least 1".into()));
    }

    let (_stack, server_url, mail_url) = match &options.target {
        Target::SelfHosted => {
            let stack = LocalStack::start(ServerConfig::default()).await.map_err(BenchError::Setup)?;
            let (s, m) = (stack.server_url(), stack.mail_url());
            (Some(stack), s, m)
        }
        Target::External { server_url, mail_url } => (None, server_url.clone(), mail_url.clone()),
    };
    let mail: SharedMail = Arc::new(HttpMail::new(&mail_url));

    // Fresh addresses so repeated runs against a persistent server do not
    // collide in the keystore.
    let tag = &Uuid::new_v4().simple().to_string()[..8];
    let alice_email = format!("alice-{tag}@bench.local");
    let bob_email = format!("bob-{tag}@bench.local");
    let alice = party(&alice_email, &server_url, &mail_url, mail.clone()).await.map_err(BenchError::Setup)?;
    let bob = party(&bob_email, &server_url, &mail_url, mail.clone()).await.map_err(BenchError::Setup)?;

    let body = preset_message(options.message_len);
    let mut trials = Vec::with_capacity(2 * options.n);
    let mut task_ids = Vec::with_capacity(2 * options.n);
    let mut attribution_max_dev_s = 0.0f64;

    let mut record = |kind: TaskKind, trial: usize, p: &Party, outcome: &meg_services::client::ActionOutcome| {
        let fail = |source: MegError| BenchError::Trial {
            kind: kind.label(),
            trial,
            task_id: Some(outcome.task_id),
            source,
        };
        let mobile = p
            .agent
            .spans()
            .get(&outcome.task_id)
            .ok_or_else(|| fail(MegError::Internal("phone span missing".into())))?;
        let window = p
            .tap
            .window(&outcome.task_id)
            .ok_or_else(|| fail(MegError::Internal("wire timestamps missing".into())))?;
        let t = &outcome.timing;
        let timing = TrialTiming::attribute(kind, secs(t.total), secs(t.wait), secs(mobile), secs(t.aes))
            .map_err(fail)?;
        let wire_server = secs(window) - secs(mobile);
        attribution_max_dev_s = attribution_max_dev_s.max((wire_server - timing.server_s).abs());
        task_ids.push(outcome.task_id);
        trials.push(timing);
        Ok::<(), BenchError>(())
    };

    for i in 0..options.n {
        let mail = OutgoingEmail { to: vec![bob_email.clone()], subject: format!("bench {i}"), body: body.clone(), encrypt: true };
        let report = alice.client.send_email(&mail).await.map_err(|source| BenchError::Trial {
            kind: TaskKind::Encryption.label(),
            trial: i,
            task_id: task_of(&source),
            source,
        })?;
        let outcome = match (&report.delivery, &report.task) {
            (Delivery::Sent { encrypted: true, .. }, Some(o)) => o,
            _ => {
                return Err(BenchError::Trial {
                    kind: TaskKind::Encryption.label(),
                    trial: i,
                    task_id: None,
                    source: MegError::Internal(format!("unexpected delivery {:?}", report.delivery)),
                })
            }
        };
        record(TaskKind::Encryption, i, &alice, outcome)?;
    }

    let inbox = bob.client.inbox().await.map_err(BenchError::Setup)?;
    let meg: Vec<_> = inbox.into_iter().filter(|m| m.is_meg()).collect();
    if meg.len() != options.n {
        return Err(BenchError::Setup(MegError::Internal(format!(
            "expected {} encrypted messages, found {}",
            options.n,
            meg.len()
        ))));
    }
    for (i, msg) in meg.iter().enumerate() {
        let fail = |task_id, source| BenchError::Trial { kind: TaskKind::Decryption.label(), trial: i, task_id, source };
        let (shown, outcome) = bob.client.receive_with_timing(msg).await.map_err(|e| fail(task_of(&e), e))?;
        let outcome = outcome.ok_or_else(|| fail(None, MegError::Internal("no phone round trip".into())))?;
        match shown {
            ReceivedMail::Decrypted { body: ref got, .. } if *got == body => {}
            _ => return Err(fail(Some(outcome.task_id), MegError::Internal("decrypted body differs".into()))),
        }
        record(TaskKind::Decryption, i, &bob, &outcome)?;
    }

    let sum_max_dev_s = trials.iter().map(|t| (t.total_s - t.aggregate_s()).abs()).fold(0.0, f64::max);
    let report = BenchReport::build(BenchEnvironment::local(), options.message_len, trials).map_err(BenchError::Setup)?;
    Ok(BenchRun { report, task_ids, attribution_max_dev_s, sum_max_dev_s })
}

fn task_of(e: &MegError) -> Option<Uuid> {
    match e {
        MegError::Timeout(id) => Some(*id),
        _ => None,
    }
}
