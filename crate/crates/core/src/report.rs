//! Benchmark trial records and the report built from them.
//!
//! Each trial is split into mobile, server and client time. Server time is
//! never measured on the server: it is what remains of the client's
//! end-to-end wait after the phone's own span is removed.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{MegError, Result};
use crate::stats::{compute_stats, BenchStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Encryption,
    Decryption,
}

impl TaskKind {
    pub fn label(&self) -> &'static str {
        match self {
            TaskKind::Encryption => "Encryption",
            TaskKind::Decryption => "Decryption",
        }
    }
}

/// One timed trial, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialTiming {
    pub task_kind: TaskKind,
    pub mobile_s: f64,
    pub server_s: f64,
    pub client_s: f64,
    pub client_aes_s: f64,
    pub total_s: f64,
}

impl TrialTiming {
    /// Splits raw spans the way the measurements are attributed:
    /// client = total - wait, server = wait - mobile.
    ///
    /// `wait_s` is submit-to-result as seen by the client; `total_s` spans
    /// the whole client call and so contains `wait_s`.
    pub fn attribute(task_kind: TaskKind, total_s: f64, wait_s: f64, mobile_s: f64, client_aes_s: f64) -> Result<Self> {
        let t = TrialTiming {
            task_kind,
            mobile_s,
            server_s: wait_s - mobile_s,
            client_s: total_s - wait_s,
            client_aes_s,
            total_s,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn aggregate_s(&self) -> f64 {
        self.mobile_s + self.server_s + self.client_s
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.mobile_s, self.server_s, self.client_s, self.client_aes_s, self.total_s];
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(MegError::InvalidArgument(format!("negative or non-finite span in {self:?}")));
        }
        Ok(())
    }
}

/// Where the trials ran.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchEnvironment {
    pub component_rows: Vec<EnvironmentRow>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvironmentRow {
    pub component: String,
    pub architecture: String,
    pub operating_system: String,
}

impl BenchEnvironment {
    /// All three components on this host.
    pub fn local() -> Self {
        let cpus = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
        let architecture = format!("{cpus} core {}", std::env::consts::ARCH);
        let operating_system = std::env::consts::OS.to_string();
        let row = |c: &str| EnvironmentRow {
            component: c.to_string(),
            architecture: architecture.clone(),
            operating_system: operating_system.clone(),
        };
        Self { component_rows: vec![row("Mobile"), row("Server"), row("Client")] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KindStats {
    pub mobile: BenchStats,
    pub server: BenchStats,
    pub client_aes: BenchStats,
    pub client_total: BenchStats,
    pub aggregate: BenchStats,
}

impl KindStats {
    pub fn from_trials(trials: &[&TrialTiming]) -> Result<Self> {
        let col = |f: fn(&TrialTiming) -> f64| compute_stats(&trials.iter().map(|t| f(t)).collect::<Vec<_>>());
        Ok(KindStats {
            mobile: col(|t| t.mobile_s)?,
            server: col(|t| t.server_s)?,
            client_aes: col(|t| t.client_aes_s)?,
            client_total: col(|t| t.client_s)?,
            aggregate: col(|t| t.aggregate_s())?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub environment: BenchEnvironment,
    pub message_len: usize,
    pub encryption: KindStats,
    pub decryption: KindStats,
    pub trials: Vec<TrialTiming>,
}

impl BenchReport {
    /// Both kinds need at least one trial.
    pub fn build(environment: BenchEnvironment, message_len: usize, trials: Vec<TrialTiming>) -> Result<Self> {
        for t in &trials {
            t.validate()?;
        }
        let of = |k: TaskKind| -> Result<KindStats> {
            let ts: Vec<_> = trials.iter().filter(|t| t.task_kind == k).collect();
            if ts.is_empty() {
                return Err(MegError::InvalidArgument(format!("no {} trials", k.label().to_lowercase())));
            }
            KindStats::from_trials(&ts)
        };
        Ok(BenchReport {
            environment,
            message_len,
            encryption: of(TaskKind::Encryption)?,
            decryption: of(TaskKind::Decryption)?,
            trials,
        })
    }

    pub fn kind(&self, kind: TaskKind) -> &KindStats {
        match kind {
            TaskKind::Encryption => &self.encryption,
            TaskKind::Decryption => &self.decryption,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = MegError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "json" => Ok(ReportFormat::Json),
            other => Err(MegError::InvalidArgument(format!("unknown format {other:?}"))),
        }
    }
}

pub fn render_report(report: &BenchReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("report serializes") + "\n",
        ReportFormat::Table => render_table(report),
    }
}

const KINDS: [TaskKind; 2] = [TaskKind::Decryption, TaskKind::Encryption];

fn stats_cells(s: &BenchStats) -> String {
    format!("{:>4}  {:>10.4}  {:>10.4}  {:>10.4}", s.n, s.median, s.mean, s.stddev)
}

fn simple_table(out: &mut String, title: &str, pick: fn(&KindStats) -> &BenchStats, report: &BenchReport) {
    let _ = writeln!(out, "{title}");
    let _ = writeln!(out, "{:<12}{:>4}  {:>10}  {:>10}  {:>10}", "", "n", "median (s)", "mu (s)", "sigma (s)");
    for k in KINDS {
        let _ = writeln!(out, "{:<12}{}", k.label(), stats_cells(pick(report.kind(k))));
    }
    out.push('\n');
}

fn render_table(report: &BenchReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Benchmarking environment");
    let _ = writeln!(out, "{:<12}{:<28}Operating System", "Component", "Architecture");
    for row in &report.environment.component_rows {
        let _ = writeln!(out, "{:<12}{:<28}{}", row.component, row.architecture, row.operating_system);
    }
    let _ = writeln!(out, "Message length: {} characters", report.message_len);
    out.push('\n');

    simple_table(&mut out, "Mobile benchmarking results", |k| &k.mobile, report);
    simple_table(&mut out, "Server benchmarking results", |k| &k.server, report);

    let _ = writeln!(out, "Client benchmarking results");
    let _ = writeln!(out, "{:<12}{:<7}{:>4}  {:>10}  {:>10}  {:>10}", "", "Task", "n", "median (s)", "mu (s)", "sigma (s)");
    for k in KINDS {
        let s = report.kind(k);
        let _ = writeln!(out, "{:<12}{:<7}{}", k.label(), "AES", stats_cells(&s.client_aes));
        let _ = writeln!(out, "{:<12}{:<7}{}", "", "total", stats_cells(&s.client_total));
    }
    out.push('\n');

    simple_table(&mut out, "Aggregated benchmarking results", |k| &k.aggregate, report);
    out.truncate(out.trim_end().len());
    out.push('\n');
    out
}
