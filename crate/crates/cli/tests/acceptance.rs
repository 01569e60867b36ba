//! Acceptance run: one test per criterion, each ending in a single
//! `criterion N: PASS` line on stderr. A failing criterion fails its test.

#[path = "../../services/tests/common/mod.rs"]
mod common;

#[path = "../../core/tests/support/crypto_props.rs"]
mod crypto_props;

use std::collections::{HashMap, HashSet};
use std::process::Command;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use uuid::Uuid;

use common::*;
use crypto_props::{expected_error, forge, Forgery};
use meg_core::broker::{TaskAction, TaskOutcome, TaskStatus};
use meg_core::crypto::{
    generate_keypair, generate_transport_key, transport_encrypt, FrameAction, KeyPair, TransportKey, UnlockedKey,
};
use meg_core::journal::{read_events, JournalEvent};
use meg_core::mailbox::{OutgoingMail, MEG_HEADER, MEG_HEADER_VALUE};
use meg_core::report::{render_report, BenchEnvironment, BenchReport, ReportFormat, TaskKind, TrialTiming};
use meg_core::stats::compute_stats;
use meg_core::wire::ActionRequest;
use meg_core::MegError;
use meg_services::capture::CapturingBroker;
use meg_services::server::{extract_revocation_token, REVOCATION_SUBJECT};
use meg_services::{Agent, ClientPlugin, OutgoingEmail, ReceivedMail, ServerConfig, SharedBroker};

fn pass(n: u32, what: &str) {
    eprintln!("criterion {n}: PASS ({what})");
}

fn contains(hay: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle)
}

/// First 16-byte window of `plaintext` found in `hay`, if any.
fn leaked_window(hay: &[u8], plaintext: &[u8]) -> Option<String> {
    plaintext
        .windows(16)
        .find(|w| contains(hay, w))
        .map(|w| String::from_utf8_lossy(w).into_owned())
}

fn encrypted(to: &str, body: &str) -> OutgoingEmail {
    OutgoingEmail { to: vec![to.into()], subject: "acceptance".into(), body: body.into(), encrypt: true }
}

struct User {
    agent: Arc<Agent>,
    client: ClientPlugin,
    handle: tokio::task::JoinHandle<usize>,
}

impl Drop for User {
    fn drop(&mut self) {
        self.handle.abort();
    }
}

async fn user(w: &World, email: &str) -> User {
    let agent = enroll(w, email).await;
    let client = paired_client(w, email, &agent).await;
    let handle = run_agent(&agent);
    User { agent, client, handle }
}

async fn await_terminal(broker: &SharedBroker, task: Uuid) -> meg_core::broker::TaskView {
    let deadline = Instant::now() + Duration::from_secs(10);
    loop {
        let view = broker.poll_result(task).await.unwrap();
        if view.status.is_terminal() {
            return view;
        }
        assert!(Instant::now() < deadline, "task {task} never finished");
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn criterion_1_end_to_end_confidentiality() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let journal = dir.path().join("journal.jsonl");
    let w = world_with(ServerConfig { journal_path: Some(journal.clone()), ..ServerConfig::default() }).await;
    let alice = user(&w, "alice@example.org").await;
    let bob = user(&w, "bob@example.org").await;
    assert_eq!(BODY_300.chars().count(), 300);

    let report = alice.client.send_email(&encrypted("bob@example.org", BODY_300)).await.unwrap();
    assert!(matches!(report.delivery, meg_services::Delivery::Sent { encrypted: true, .. }));
    let inbox = bob.client.inbox().await.unwrap();
    assert_eq!(inbox.len(), 1);
    assert!(inbox[0].is_meg());
    match bob.client.receive_email(&inbox[0]).await.unwrap() {
        ReceivedMail::Decrypted { body, signer_email, .. } => {
            assert_eq!(body.as_bytes(), BODY_300.as_bytes());
            assert_eq!(signer_email.as_deref(), Some("alice@example.org"));
        }
        other => panic!("not decrypted: {other:?}"),
    }
    let elapsed = started.elapsed();

    let mut stored = serde_json::to_vec(&w.stack.mailbox.all()).unwrap();
    for m in w.stack.mailbox.all() {
        stored.extend_from_slice(m.to_rfc5322().as_bytes());
    }
    let server = w.stack.server.dump();
    let journal_bytes = std::fs::read(&journal).unwrap();
    assert!(!journal_bytes.is_empty());
    for (name, hay) in [("mail store", &stored[..]), ("server state", server.as_bytes()), ("journal", &journal_bytes[..])] {
        assert_eq!(leaked_window(hay, BODY_300.as_bytes()), None, "plaintext window found in {name}");
    }
    assert!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    pass(1, &format!("300-character roundtrip in {:.2} s, no 16-byte plaintext window stored", elapsed.as_secs_f64()));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn criterion_2_forgeries_never_decrypt() {
    let w = world().await;
    let home = tempfile::tempdir().unwrap();
    let alice_agent = Arc::new(
        Agent::enroll(
            &identity("alice@example.org"),
            PASSWORD,
            w.broker.clone(),
            fast_agent_options(&w).with_home(home.path()),
        )
        .await
        .unwrap(),
    );
    let alice_key: UnlockedKey = KeyPair::from_json(&std::fs::read_to_string(home.path().join("key.json")).unwrap())
        .unwrap()
        .unlock(PASSWORD)
        .unwrap();
    assert_eq!(alice_key.fingerprint(), alice_agent.public_key().await.fingerprint());

    let bob_agent = enroll(&w, "bob@example.org").await;
    let capture = CapturingBroker::new(w.broker.clone());
    let bob_client = client_via(&w, "bob@example.org", Arc::new(capture.clone()));
    let qr = bob_client.init_pairing().await.unwrap();
    bob_agent.pair(&qr.to_json()).await.unwrap();
    assert!(bob_client.confirm_pairing().await.unwrap());
    let _loop = run_agent(&bob_agent);
    let bob_pub = bob_agent.public_key().await;

    // Unregistered key signing in its own name, and claiming Alice's.
    let mut rng = StdRng::seed_from_u64(2);
    let mut mallory_secret = [0u8; 64];
    rng.fill(&mut mallory_secret[..]);
    let mallory = UnlockedKey::from_test_secret(&mallory_secret);

    let kinds = [
        Forgery::WrongSigner,
        Forgery::BadSignature,
        Forgery::CiphertextFlip,
        Forgery::NonceFlip,
        Forgery::WrappedKeyFlip,
        Forgery::HeaderSender,
    ];
    let mut secrets = Vec::new();
    for i in 0..100 {
        let kind = kinds[i % kinds.len()];
        let secret = format!("forgery {i}: transfer {} to account {:08}", rng.gen_range(100..999), rng.gen::<u32>());
        let env = forge(kind, secret.as_bytes(), &alice_key, &mallory, &bob_pub, rng.gen(), rng.gen_range(0..8));
        let mail = OutgoingMail::new("bob@example.org", "alice@example.org", format!("forged {i}"), env.armor())
            .with_header(MEG_HEADER, MEG_HEADER_VALUE);
        w.mail.deliver(mail).await.unwrap();
        secrets.push((kind, secret));
    }

    let inbox = bob_client.inbox().await.unwrap();
    assert_eq!(inbox.len(), 100);
    let mut codes: HashMap<&'static str, usize> = HashMap::new();
    for msg in &inbox {
        let i: usize = msg.subject().trim_start_matches("forged ").parse().unwrap();
        let (kind, secret) = &secrets[i];
        let err = bob_client.receive_email(msg).await.expect_err("forged mail was shown");
        match kind {
            Forgery::HeaderSender => assert!(
                matches!(err, MegError::SignatureInvalid | MegError::TamperDetected),
                "{i}: {err:?}"
            ),
            k => assert_eq!(err, expected_error(*k), "{i} ({k:?})"),
        }
        assert!(!err.to_string().contains(secret.as_str()));
        *codes.entry(err.code()).or_default() += 1;
    }

    // Every phone round trip ended failed, with no result frame to open.
    let tasks = w.stack.server.broker.tasks();
    assert_eq!(tasks.len(), 100);
    for t in &tasks {
        assert_eq!(t.status, TaskStatus::Failed, "{}", t.task_id);
        assert!(t.result_frame.is_none());
    }
    let dump = w.stack.server.dump();
    let sent = capture.outbound_bytes();
    for (_, secret) in &secrets {
        assert!(!dump.contains(secret.as_str()));
        assert!(!contains(&sent, secret.as_bytes()));
    }
    pass(2, &format!("100 forged or tampered envelopes refused, codes {codes:?}"));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn criterion_3_revocation_flow() {
    let w = world().await;
    let alice = user(&w, "alice@example.org").await;
    let bob = user(&w, "bob@example.org").await;

    bob.client.revoke_my_key().await.unwrap();
    let mail = w.stack.mailbox.fetch_inbox("bob@example.org", None);
    let token_mail = mail.iter().find(|m| m.subject() == REVOCATION_SUBJECT).expect("token mail in mail store");
    let token = extract_revocation_token(&token_mail.body).expect("token in mail");
    // Not revoked until confirmed.
    assert!(!w.broker.lookup_public_key("bob@example.org").await.unwrap().revoked);

    bob.client.complete_revocation(&token).await.unwrap();
    assert!(w.broker.lookup_public_key("bob@example.org").await.unwrap().revoked);

    let err = alice.client.send_email(&encrypted("bob@example.org", "after revocation")).await.unwrap_err();
    assert_eq!(err.code(), "recipient-revoked");
    assert!(matches!(&err, MegError::RecipientRevoked(who) if who == &vec!["bob@example.org".to_string()]));

    let err = bob.client.complete_revocation(&token).await.unwrap_err();
    assert_eq!(err, MegError::TokenInvalid);
    assert_eq!(err.code(), "token-invalid");
    pass(3, "request, mailed token, confirm, revoked lookup, recipient-revoked, token single use");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn criterion_4_pairing_is_single_use() {
    let w = world().await;
    let first = enroll(&w, "alice@example.org").await;
    let second = enroll(&w, "mallory@example.org").await;
    let c = client(&w, "alice@example.org");
    let qr = c.init_pairing().await.unwrap();
    first.pair(&qr.to_json()).await.unwrap();
    assert!(c.confirm_pairing().await.unwrap());

    assert_eq!(second.pair(&qr.to_json()).await.unwrap_err(), MegError::AlreadyPaired);
    assert_eq!(first.pair(&qr.to_json()).await.unwrap_err(), MegError::AlreadyPaired);
    assert_eq!(c.init_pairing().await.unwrap_err(), MegError::AlreadyPaired);
    assert_eq!(w.broker.pairing_of(c.client_id()).await.unwrap(), first.device_id());
    assert!(second.paired_clients().await.is_empty());

    let _loop = run_agent(&first);
    let rogue = generate_transport_key().unwrap();
    let rogue = TransportKey::from_bytes(c.client_id(), rogue.key_bytes()).unwrap();
    let req = ActionRequest {
        action: TaskAction::Encrypt,
        body: "rogue".into(),
        sender_email: "alice@example.org".into(),
        recipient_emails: vec!["alice@example.org".into()],
    };
    let frame = transport_encrypt(&serde_json::to_vec(&req).unwrap(), &rogue, FrameAction::Encrypt).unwrap();
    let task = w.broker.submit_task(c.client_id(), TaskAction::Encrypt, frame).await.unwrap();
    let view = await_terminal(&w.broker, task).await;
    assert_eq!(view.status, TaskStatus::Failed);
    assert!(view.result_frame.is_none());
    assert_eq!(view.error.unwrap().code, "tamper-detected");

    // The genuine key still works.
    c.send_email(&encrypted("alice@example.org", "genuine")).await.unwrap();
    pass(4, "second agent and replay refused already-paired, foreign transport key tamper-detected");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn criterion_5_device_lock_message() {
    let w = world().await;
    let alice = user(&w, "alice@example.org").await;
    let bob = user(&w, "bob@example.org").await;
    let mail = encrypted("bob@example.org", "sent once the phone is back");

    alice.agent.close_app().await;
    let err = alice.client.send_email(&mail).await.unwrap_err();
    assert_eq!(err.to_string(), "please log back into the mobile app to complete this action");
    assert!(bob.client.inbox().await.unwrap().is_empty());

    alice.agent.open_app(PASSWORD).await.unwrap();
    alice.client.send_email(&mail).await.unwrap();
    let inbox = bob.client.inbox().await.unwrap();
    assert_eq!(inbox.len(), 1);
    match bob.client.receive_email(&inbox[0]).await.unwrap() {
        ReceivedMail::Decrypted { body, .. } => assert_eq!(body, mail.body),
        other => panic!("{other:?}"),
    }
    pass(5, "locked phone surfaces the re-login message; resubmission after unlock delivers");
}

const SCHEDULE_CLIENTS: usize = 4;
const SCHEDULE_TASKS: usize = 200;

#[tokio::test(flavor = "multi_thread", worker_threads = 8)]
async fn criterion_6_broker_schedule_over_http() {
    let seed = 6u64;
    let dir = tempfile::tempdir().unwrap();
    let journal = dir.path().join("journal.jsonl");
    let w = world_with(ServerConfig { journal_path: Some(journal.clone()), ..ServerConfig::default() }).await;

    // A long poll as long as the server allows: a lost wake-up would stall
    // the phone far past the latency bound checked below.
    let mut opts = fast_agent_options(&w);
    opts.notify_wait = meg_services::server::MAX_NOTIFY_WAIT;
    let agent = Arc::new(Agent::enroll(&identity("alice@example.org"), PASSWORD, w.broker.clone(), opts).await.unwrap());
    let mut clients = Vec::new();
    for _ in 0..SCHEDULE_CLIENTS {
        let mut c = paired_client(&w, "alice@example.org", &agent).await;
        c = ClientPlugin::new(
            c.config(),
            w.broker.clone(),
            w.mail.clone(),
            meg_services::ClientOptions {
                poll_interval: Duration::from_millis(20),
                poll_timeout: Duration::from_secs(30),
                home: None,
            },
        );
        clients.push(Arc::new(c));
    }
    let _loop = run_agent(&agent);

    let encrypt = ActionRequest {
        action: TaskAction::Encrypt,
        body: "scheduled".into(),
        sender_email: "alice@example.org".into(),
        recipient_emails: vec!["alice@example.org".into()],
    };
    let setup = clients[0].run_action(&encrypt).await.unwrap();
    let decrypt = ActionRequest { action: TaskAction::Decrypt, body: setup.result.body.clone(), ..encrypt.clone() };

    // A rival completer races the phone for delivered tasks over HTTP.
    let stop = Arc::new(AtomicBool::new(false));
    let rival_wins = Arc::new(Mutex::new(HashSet::new()));
    let rival = {
        let (server, broker, stop, wins) = (w.stack.server.clone(), w.broker.clone(), stop.clone(), rival_wins.clone());
        tokio::spawn(async move {
            let mut rng = StdRng::seed_from_u64(seed ^ 0xbeef);
            while !stop.load(Ordering::Relaxed) {
                let delivered: Vec<Uuid> = server
                    .broker
                    .tasks()
                    .into_iter()
                    .filter(|t| t.status == TaskStatus::Delivered)
                    .map(|t| t.task_id)
                    .collect();
                if !delivered.is_empty() && rng.gen_bool(0.2) {
                    let id = delivered[rng.gen_range(0..delivered.len())];
                    let outcome = TaskOutcome::Failed(MegError::DeviceUnreachable.to_body());
                    match broker.complete_task(id, outcome).await {
                        Ok(()) => assert!(wins.lock().unwrap().insert(id), "rival completed {id} twice"),
                        Err(MegError::WrongState(_)) => {}
                        Err(e) => panic!("rival: {e:?}"),
                    }
                }
                tokio::time::sleep(Duration::from_micros(rng.gen_range(200..2000))).await;
            }
        })
    };

    let started = Instant::now();
    let mut jobs = Vec::new();
    for (c, client) in clients.iter().enumerate() {
        let mut rng = StdRng::seed_from_u64(seed.wrapping_add(c as u64));
        for _ in 0..SCHEDULE_TASKS / SCHEDULE_CLIENTS {
            let client = client.clone();
            let req = if rng.gen_bool(0.5) { encrypt.clone() } else { decrypt.clone() };
            let jitter = Duration::from_millis(rng.gen_range(0..2000));
            jobs.push(tokio::spawn(async move {
                tokio::time::sleep(jitter).await;
                client.run_action(&req).await
            }));
        }
    }
    let (mut ok, mut lost_race) = (0usize, 0usize);
    for job in jobs {
        match job.await.unwrap() {
            Ok(_) => ok += 1,
            Err(MegError::DeviceUnreachable) => lost_race += 1,
            Err(e) => panic!("task failed: {e:?}"),
        }
    }
    let elapsed = started.elapsed();
    stop.store(true, Ordering::Relaxed);
    rival.await.unwrap();
    let rival_wins = rival_wins.lock().unwrap().clone();
    assert_eq!(ok + lost_race, SCHEDULE_TASKS);
    assert_eq!(lost_race, rival_wins.len());

    let tasks: Vec<_> =
        w.stack.server.broker.tasks().into_iter().filter(|t| t.task_id != setup.task_id).collect();
    assert_eq!(tasks.len(), SCHEDULE_TASKS);
    assert!(tasks.iter().all(|t| t.status.is_terminal()), "non-terminal task left");

    let mut history: HashMap<Uuid, Vec<(TaskStatus, chrono::DateTime<chrono::Utc>)>> = HashMap::new();
    let (mut pending_order, mut delivered_order) = (Vec::new(), Vec::new());
    for ev in read_events(&journal).unwrap() {
        if let JournalEvent::TaskUpserted { task } = ev {
            if task.task_id == setup.task_id {
                continue;
            }
            match task.status {
                TaskStatus::Pending => pending_order.push(task.task_id),
                TaskStatus::Delivered => delivered_order.push(task.task_id),
                _ => {}
            }
            history.entry(task.task_id).or_default().push((task.status, task.updated_at));
        }
    }
    assert_eq!(history.len(), SCHEDULE_TASKS);
    assert_eq!(delivered_order, pending_order, "delivery is not FIFO");
    let mut slowest_wake = chrono::Duration::zero();
    for (id, h) in &history {
        let states: Vec<TaskStatus> = h.iter().map(|(s, _)| *s).collect();
        assert_eq!(&states[..2], &[TaskStatus::Pending, TaskStatus::Delivered], "{id}: {states:?}");
        assert_eq!(states.len(), 3, "{id} completed more than once: {states:?}");
        assert!(states[2].is_terminal());
        slowest_wake = slowest_wake.max(h[1].1 - h[0].1);
    }
    assert!(slowest_wake < chrono::Duration::seconds(5), "a task waited {slowest_wake} for the phone");
    assert!(elapsed < Duration::from_secs(50), "schedule took {elapsed:?}");
    pass(
        6,
        &format!(
            "{SCHEDULE_TASKS} tasks from {SCHEDULE_CLIENTS} clients over HTTP, {} lost to the rival, slowest wake {} ms",
            rival_wins.len(),
            slowest_wake.num_milliseconds()
        ),
    );
}

#[test]
fn criterion_7_benchmark_binary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let o = Command::new(env!("CARGO_BIN_EXE_meg-bench"))
        .args(["--n", "20", "--len", "300", "--format", "json", "--out", out.to_str().unwrap()])
        .env("RUST_LOG", "warn")
        .env_remove("RUST_BACKTRACE")
        .output()
        .unwrap();
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(o.status.success(), "meg-bench failed: {stderr}");
    let report = BenchReport::from_json(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report.message_len, 300);
    assert_eq!(report.trials.len(), 40);

    const MS: f64 = 1e-3;
    for t in &report.trials {
        let sum = t.mobile_s + t.server_s + t.client_s;
        assert!((t.total_s - sum).abs() <= MS, "trial total {} vs component sum {sum}", t.total_s);
    }
    // The client's wait must match the wire window around the server.
    let line = stderr.lines().find(|l| l.starts_with("attribution check")).expect("attribution line");
    let devs: Vec<f64> = line
        .split('=')
        .skip(1)
        .map(|s| s.split_whitespace().next().unwrap().trim_end_matches(';').parse().unwrap())
        .collect();
    assert_eq!(devs.len(), 2, "{line}");
    assert!(devs.iter().all(|d| *d <= MS), "{line}");

    let table = render_report(&report, ReportFormat::Table);
    let headings = [
        "Benchmarking environment",
        "Mobile benchmarking results",
        "Server benchmarking results",
        "Client benchmarking results",
        "Aggregated benchmarking results",
    ];
    let mut at = 0;
    for h in headings {
        let i = table[at..].find(h).unwrap_or_else(|| panic!("missing or out of order: {h}\n{table}"));
        at += i + h.len();
    }
    for section in table.split("\n\n").skip(1) {
        let rows: Vec<&str> = section.lines().skip(2).collect();
        let labels: Vec<String> = rows
            .iter()
            .map(|r| r.split_whitespace().take(2).collect::<Vec<_>>().join(" "))
            .collect();
        if section.starts_with("Client") {
            assert_eq!(labels, ["Decryption AES", "total 20", "Encryption AES", "total 20"], "{section}");
        } else {
            assert_eq!(labels, ["Decryption 20", "Encryption 20"], "{section}");
        }
    }

    let enc = report.kind(TaskKind::Encryption).aggregate.median;
    let dec = report.kind(TaskKind::Decryption).aggregate.median;
    assert!(enc < 2.098, "encryption aggregate median {enc}");
    assert!(dec < 1.808, "decryption aggregate median {dec}");
    pass(7, &format!("aggregate medians enc {enc:.4} s, dec {dec:.4} s; sums and attribution within 1 ms"));
}

/// Brute-force statistics: median by rank counting, mean by compensated
/// summation, sample variance by the pairwise identity
/// sum_{i<j} (x_i - x_j)^2 / (n (n - 1)).
fn oracle(xs: &[f64]) -> (f64, f64, f64) {
    let n = xs.len();
    let kth = |k: usize| {
        *xs.iter()
            .find(|&&x| {
                let below = xs.iter().filter(|&&y| y < x).count();
                let equal = xs.iter().filter(|&&y| y == x).count();
                below <= k && k < below + equal
            })
            .expect("rank exists")
    };
    let median = if n % 2 == 1 { kth(n / 2) } else { (kth(n / 2 - 1) + kth(n / 2)) / 2.0 };
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for &x in xs {
        let t = sum + x;
        carry += if sum.abs() >= x.abs() { (sum - t) + x } else { (x - t) + sum };
        sum = t;
    }
    let mean = (sum + carry) / n as f64;
    let mut pairs = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            pairs += (xs[i] - xs[j]).powi(2);
        }
    }
    let sd = if n < 2 { 0.0 } else { (pairs / (n * (n - 1)) as f64).sqrt() };
    (median, mean, sd)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * (1.0 + b.abs())
}

/// Half a unit in the last printed place of a value given to `decimals`.
fn half_unit(decimals: i32) -> f64 {
    0.5 * 10f64.powi(-decimals)
}

fn trial(kind: TaskKind, mobile: f64, server: f64, client: f64) -> TrialTiming {
    TrialTiming {
        task_kind: kind,
        mobile_s: mobile,
        server_s: server,
        client_s: client,
        client_aes_s: client / 10.0,
        total_s: mobile + server + client,
    }
}

#[test]
fn criterion_8_statistics_and_table_identity() {
    let mut runner = TestRunner::new(Config { cases: 1000, failure_persistence: None, ..Config::default() });
    runner
        .run(&prop::collection::vec(0.0f64..10.0, 1..60), |xs| {
            let s = compute_stats(&xs).unwrap();
            let (median, mean, sd) = oracle(&xs);
            prop_assert_eq!(s.n, xs.len());
            prop_assert_eq!(s.median, median);
            prop_assert!(close(s.mean, mean), "mean {} vs {}", s.mean, mean);
            prop_assert!(close(s.stddev, sd), "sd {} vs {}", s.stddev, sd);
            Ok(())
        })
        .unwrap();

    // Through the report: each column matches the oracle, and mean
    // aggregate is the sum of the component means.
    let mut rng = StdRng::seed_from_u64(8);
    for _ in 0..200 {
        let n = rng.gen_range(1..30);
        let trials: Vec<TrialTiming> = (0..2 * n)
            .map(|i| {
                let kind = if i < n { TaskKind::Encryption } else { TaskKind::Decryption };
                trial(kind, rng.gen_range(0.0..1.0), rng.gen_range(0.0..3.0), rng.gen_range(0.0..0.5))
            })
            .collect();
        let report = BenchReport::build(BenchEnvironment::local(), 300, trials.clone()).unwrap();
        for kind in [TaskKind::Encryption, TaskKind::Decryption] {
            let mine: Vec<&TrialTiming> = trials.iter().filter(|t| t.task_kind == kind).collect();
            let k = report.kind(kind);
            let col = |f: fn(&TrialTiming) -> f64| oracle(&mine.iter().map(|t| f(t)).collect::<Vec<_>>());
            for (stats, (median, mean, sd)) in [
                (k.mobile, col(|t| t.mobile_s)),
                (k.server, col(|t| t.server_s)),
                (k.client_total, col(|t| t.client_s)),
                (k.aggregate, col(|t| t.mobile_s + t.server_s + t.client_s)),
            ] {
                assert!(close(stats.median, median) && close(stats.mean, mean) && close(stats.stddev, sd));
            }
            assert!(close(k.aggregate.mean, k.mobile.mean + k.server.mean + k.client_total.mean));
        }
    }

    // Published means fed in as fixed inputs: (mobile, server, client total,
    // aggregate) with the number of decimals each was printed to.
    let published = [
        (TaskKind::Decryption, (0.2959, 4), (1.485, 3), (0.182, 3), (1.962, 3)),
        (TaskKind::Encryption, (0.3134, 4), (1.547, 3), (0.209, 3), (2.07, 2)),
    ];
    let mut notes = Vec::new();
    for (kind, (m, dm), (s, ds), (c, dc), (agg, da)) in published {
        let bound = half_unit(dm) + half_unit(ds) + half_unit(dc) + half_unit(da);
        // One trial, and twenty with symmetric spread around the same means.
        let single = vec![trial(kind, m, s, c)];
        let spread: Vec<TrialTiming> = (0..20)
            .map(|i| {
                let d = if i % 2 == 0 { 1.0 } else { -1.0 } * 0.001 * (i / 2) as f64;
                trial(kind, m + d, s - d / 2.0, c + d / 4.0)
            })
            .collect();
        for trials in [single, spread] {
            let other = if kind == TaskKind::Encryption { TaskKind::Decryption } else { TaskKind::Encryption };
            let mut all = trials.clone();
            all.push(trial(other, 0.0, 0.0, 0.0));
            let report = BenchReport::build(BenchEnvironment::local(), 300, all).unwrap();
            let got = report.kind(kind).aggregate.mean;
            assert!(close(got, m + s + c), "{got} vs {}", m + s + c);
            assert!((got - agg).abs() <= bound, "{kind:?}: {got} vs published {agg}, bound {bound}");
        }
        notes.push(format!("{}: {:.4} vs {agg} (bound {bound:.5})", kind.label(), m + s + c));
    }
    pass(8, &format!("stats match oracle over 1000 sets; {}", notes.join("; ")));
}

#[test]
fn criterion_9_crypto_properties() {
    const CASES: u32 = 1000;
    crypto_props::roundtrip_multi_recipient(CASES).unwrap();
    crypto_props::forgeries_rejected(CASES).unwrap();
    crypto_props::fingerprint_determinism(CASES).unwrap();
    crypto_props::key_file_roundtrip(CASES).unwrap();

    // Real password-locked key files, too.
    for email in ["alice@example.org", "bob@example.org"] {
        let (kp, _) = generate_keypair(&identity(email), PASSWORD).unwrap();
        let json = kp.to_json();
        let back = KeyPair::from_json(&json).unwrap();
        assert_eq!(back, kp);
        assert_eq!(back.to_json(), json);
        assert_eq!(back.unlock(PASSWORD).unwrap().fingerprint(), kp.fingerprint());
    }
    pass(9, "1000 cases each: roundtrip, forgery, multi-recipient, fingerprint, envelope and key-file serialization");
}
