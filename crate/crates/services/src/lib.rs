//! Networked MEG components: the keystore/broker server and mail provider
//! over HTTP, clients for both, the phone-side gateway agent and the email
//! client plugin.

pub mod agent;
pub mod api;
pub mod capture;
pub mod client;
pub mod http;
pub mod mail;
pub mod server;
pub mod stack;

pub use agent::{Agent, AgentOptions, RunLimits, SpanLog};
pub use api::{BrokerApi, MailApi, SharedBroker, SharedMail};
pub use client::{ClientConfig, ClientOptions, ClientPlugin, Delivery, DeliveryReport, OutgoingEmail, ReceivedMail};
pub use http::{HttpBroker, HttpMail};
pub use server::{LocalBroker, MegServer, ServerConfig};
pub use stack::LocalStack;
