use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use micoach::api::{router, system_clock, AppState};
use micoach::cli;
use micoach_core::engine::Mode;
use micoach_core::persistence::{ExportFormat, Store};

#[derive(Parser)]
#[command(name = "micoach", version, about = "Motivational-interviewing skills trainer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve the HTTP API. Admin endpoints need MICOACH_ADMIN_TOKEN.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Data directory for users, sessions and uploaded scripts.
        #[arg(long, default_value = "data")]
        data: PathBuf,
        /// Curriculum directory (with manifest.json); defaults to the bundled one.
        #[arg(long)]
        curriculum: Option<PathBuf>,
    },
    /// Score a coded transcript, optionally with a ratings matrix.
    Score {
        #[arg(long)]
        transcript: PathBuf,
        /// Headerless CSV, one subject per row, one rater or item per column.
        #[arg(long)]
        ratings: Option<PathBuf>,
    },
    /// Drive a script with a simulated trainee.
    Simulate {
        /// A .miscript file, a curriculum directory, or `bundled`.
        script: String,
        #[arg(long, default_value = "roleplay")]
        mode: Mode,
        #[arg(long, value_enum, default_value = "always-adherent")]
        policy: cli::PolicyName,
        /// Probability of a nonadherent pick for the random policy.
        #[arg(long, default_value_t = 0.3)]
        p: f64,
        /// Comma-separated picks for the scripted policy: a, n or option ids.
        #[arg(long)]
        choices: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        runs: usize,
        /// Write a JSONL trace here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Leave per-event lines out of the trace.
        #[arg(long)]
        summary_only: bool,
    },
    /// Validate a script, or lint a curriculum directory.
    Validate { path: PathBuf },
    /// Export a stored session's events.
    Export {
        session: String,
        #[arg(long, default_value = "data")]
        data: PathBuf,
        #[arg(long, default_value = "jsonl")]
        format: ExportFormat,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "micoach=info,warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Serve { port, host, data, curriculum } => {
            let program = match &curriculum {
                Some(dir) => cli::load_curriculum_dir(dir)?.program,
                None => micoach_core::curriculum::bundled().program,
            };
            let store = Store::open(&data).with_context(|| format!("opening data directory {}", data.display()))?;
            let token = std::env::var("MICOACH_ADMIN_TOKEN").ok();
            if token.as_deref().unwrap_or("").is_empty() {
                tracing::warn!("MICOACH_ADMIN_TOKEN is not set; script upload and export are disabled");
            }
            let state = Arc::new(AppState::new(store, program, token, system_clock())?);
            let addr: SocketAddr = format!("{host}:{port}").parse().context("invalid --host/--port")?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
                tracing::info!(%addr, "listening");
                axum::serve(listener, router(state))
                    .with_graceful_shutdown(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await?;
                anyhow::Ok(())
            })?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Score { transcript, ratings } => {
            let out = cli::score(&transcript, ratings.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&out)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate { script, mode, policy, p, choices, seed, runs, out, summary_only } => {
            let program = cli::load_program(&script)?;
            let args = cli::SimulateArgs { mode, policy, p, choices, seed, runs, summary_only };
            let summary = cli::simulate_to(&program, &script, &args, out.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { path } => {
            let report = cli::validate_path(&path)?;
            if !report.errors.is_empty() || !report.warnings.is_empty() {
                println!("{}", cli::format_report(&report));
            }
            println!("{} errors, {} warnings", report.errors.len(), report.warnings.len());
            Ok(if report.is_ok() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Export { session, data, format } => {
            let store = Store::open(&data)?;
            let bytes = store.export_events(&session, format)?;
            use std::io::Write;
            std::io::stdout().write_all(&bytes)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}
