#![allow(dead_code)]

use std::sync::Arc;
use std::time::Duration;

use tokio::task::JoinHandle;

use meg_core::crypto::UserIdentity;
use meg_services::{
    Agent, AgentOptions, ClientConfig, ClientOptions, ClientPlugin, HttpBroker, HttpMail, LocalStack, RunLimits,
    ServerConfig, SharedBroker, SharedMail,
};

pub const PASSWORD: &str = "correct horse battery staple";

pub struct World {
    pub stack: LocalStack,
    pub broker: SharedBroker,
    pub mail: SharedMail,
}

pub async fn world() -> World {
    world_with(ServerConfig::default()).await
}

pub async fn world_with(config: ServerConfig) -> World {
    let stack = LocalStack::start(config).await.unwrap();
    let broker: SharedBroker = Arc::new(HttpBroker::new(&stack.server_url()));
    let mail: SharedMail = Arc::new(HttpMail::new(&stack.mail_url()));
    World { stack, broker, mail }
}

pub fn identity(email: &str) -> UserIdentity {
    let local = email.split('@').next().unwrap();
    UserIdentity::new(local, "Tester", "+15550100", email).unwrap()
}

pub fn fast_agent_options(w: &World) -> AgentOptions {
    let mut o = AgentOptions::new(w.stack.server_url());
    o.notify_wait = Duration::from_millis(500);
    o.backoff_initial = Duration::from_millis(20);
    o.backoff_max = Duration::from_millis(100);
    o
}

pub async fn enroll(w: &World, email: &str) -> Arc<Agent> {
    enroll_via(w, email, w.broker.clone()).await
}

pub async fn enroll_via(w: &World, email: &str, broker: SharedBroker) -> Arc<Agent> {
    Arc::new(Agent::enroll(&identity(email), PASSWORD, broker, fast_agent_options(w)).await.unwrap())
}

pub fn fast_client_options() -> ClientOptions {
    ClientOptions { poll_interval: Duration::from_millis(10), poll_timeout: Duration::from_secs(10), home: None }
}

pub fn client(w: &World, email: &str) -> ClientPlugin {
    client_via(w, email, w.broker.clone())
}

pub fn client_via(w: &World, email: &str, broker: SharedBroker) -> ClientPlugin {
    let cfg = ClientConfig::new(email, &w.stack.server_url(), &w.stack.mail_url()).unwrap();
    ClientPlugin::new(cfg, broker, w.mail.clone(), fast_client_options())
}

/// Client paired with `agent` through the QR payload.
pub async fn paired_client(w: &World, email: &str, agent: &Agent) -> ClientPlugin {
    let c = client(w, email);
    let qr = c.init_pairing().await.unwrap();
    agent.pair(&qr.to_json()).await.unwrap();
    assert!(c.confirm_pairing().await.unwrap());
    c
}

/// Agent loop running until the handle is aborted or the agent shut down.
pub fn run_agent(agent: &Arc<Agent>) -> JoinHandle<usize> {
    let a = agent.clone();
    tokio::spawn(async move { a.run_loop(RunLimits::default()).await.unwrap() })
}

pub const BODY_300: &str = "Dear Bob, the quarterly numbers are in and they look good. Please keep them confidential until the board meeting on Thursday. I have attached nothing, because attachments are not supported yet, so here is the summary: revenue up eleven percent, costs flat, churn down two points. Regards, Alice......";
