//! End-to-end latency benchmark.

use std::path::PathBuf;

use anyhow::Context;
use clap::Parser;

use meg_bench::{run_benchmark_with, BenchOptions, Target};
use meg_core::report::{render_report, ReportFormat};

#[derive(Parser)]
#[command(version, about = "Timed encryption and decryption trials through the full MEG path")]
struct Args {
    /// Trials per task kind.
    #[arg(long, default_value_t = 20)]
    n: usize,
    /// Message length in characters.
    #[arg(long, default_value_t = 300)]
    len: usize,
    /// `table` or `json`.
    #[arg(long, default_value = "table")]
    format: ReportFormat,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use an already running server instead of starting one in process.
    #[arg(long, requires = "mail")]
    server: Option<String>,
    /// Mail provider to use with `--server`.
    #[arg(long, requires = "server")]
    mail: Option<String>,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    meg_cli::init_tracing();
    let args = Args::parse();
    let target = match (args.server, args.mail) {
        (Some(s), Some(m)) => Target::External {
            server_url: meg_services::http::base_url(&s),
            mail_url: meg_services::http::base_url(&m),
        },
        _ => Target::SelfHosted,
    };
    let options = BenchOptions { n: args.n, message_len: args.len, target };
    let run = run_benchmark_with(&options).await?;
    eprintln!(
        "attribution check: max |wire server - timed server| = {:.6} s; max |total - component sum| = {:.9} s",
        run.attribution_max_dev_s, run.sum_max_dev_s
    );
    let text = render_report(&run.report, args.format);
    match args.out {
        Some(path) => std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}
