//! Command-line pipeline: ledger → matches → panels → estimates → spillover
//! scenarios, plus synthetic inputs. Every subcommand writes its tables into
//! the output directory with a `manifest-<subcommand>.txt` beside them.

pub mod commands;
pub mod config;
pub mod error;

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};

pub use config::RunConfig;
pub use error::{CliError, Result};

use error::Context;

#[derive(Debug, Parser)]
#[command(name = "cryptoflow", version, about = "Crypto-vehicle flows and fiscal-shock estimators")]
pub struct Cli {
    /// TOML configuration; defaults apply to anything it leaves out.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub window_hours: Option<f64>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true, value_parser = ["high-income", "oecd"])]
    pub control_rule: Option<String>,
    #[arg(long, global = true, value_parser = ["all", "low", "middle", "high"])]
    pub filter: Option<String>,
    #[arg(long, global = true, value_parser = ["outflow", "inflow"])]
    pub direction: Option<String>,
    /// Placebo repetitions for `sdid`.
    #[arg(long, global = true)]
    pub reps: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Pair equal-size trades into vehicle transfers.
    Match,
    /// Aggregate vehicles into country × week panels, one per counterparty filter.
    Panel,
    /// Poisson DID table over the counterparty filters.
    Did,
    /// Weekly Poisson event-study coefficients for plotting.
    EventStudy,
    /// OLS DID on mean transaction size.
    OlsSize,
    /// Synthetic difference-in-differences with placebo standard errors.
    Sdid,
    /// Counterfactual spillover share and scenario table.
    Spillover,
    /// Synthetic ledger, rates and truth (or a synthetic panel).
    Synth,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Match => "match",
            Command::Panel => "panel",
            Command::Did => "did",
            Command::EventStudy => "event-study",
            Command::OlsSize => "ols-size",
            Command::Sdid => "sdid",
            Command::Spillover => "spillover",
            Command::Synth => "synth",
        }
    }
}

impl Cli {
    /// Loads the config file, if any, and applies command-line overrides.
    pub fn effective_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.paths.out = o.clone();
        }
        if let Some(h) = self.window_hours {
            cfg.matching.window_hours = h;
        }
        if let Some(a) = self.alpha {
            cfg.matching.alpha = a;
        }
        if let Some(r) = &self.control_rule {
            cfg.panel.control_rule = r.clone();
        }
        if let Some(f) = &self.filter {
            cfg.panel.filter = Some(f.clone());
        }
        if let Some(d) = &self.direction {
            cfg.panel.direction = d.clone();
        }
        if let Some(r) = self.reps {
            cfg.sdid.reps = r;
        }
        Ok(cfg)
    }
}

/// Runs one subcommand and returns the files it wrote, manifest last.
pub fn run(command: Command, cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let out = &cfg.paths.out;
    std::fs::create_dir_all(out).ctx("cli", || format!("create output directory {}", out.display()))?;
    let mut written = match command {
        Command::Match => commands::run_match(cfg),
        Command::Panel => commands::run_panel(cfg),
        Command::Did => commands::run_did(cfg),
        Command::EventStudy => commands::run_event_study(cfg),
        Command::OlsSize => commands::run_ols_size(cfg),
        Command::Sdid => commands::run_sdid(cfg),
        Command::Spillover => commands::run_spillover(cfg),
        Command::Synth => commands::run_synth(cfg),
    }?;
    written.push(write_manifest(command, cfg, &written)?);
    Ok(written)
}

fn write_manifest(command: Command, cfg: &RunConfig, artifacts: &[PathBuf]) -> Result<PathBuf> {
    let path = cfg.paths.out.join(format!("manifest-{}.txt", command.name()));
    let digest = Sha256::digest(cfg.canonical().as_bytes());
    let names: Vec<String> =
        artifacts.iter().filter_map(|p| p.file_name()).map(|n| n.to_string_lossy().into_owned()).collect();
    let text = format!(
        "subcommand: {}\ncryptoflow: {}\ncryptoflow-cli: {}\nseed: {}\nconfig_sha256: {:x}\nartifacts: {}\n",
        command.name(),
        cryptoflow::VERSION,
        env!("CARGO_PKG_VERSION"),
        cfg.seed,
        digest,
        names.join(" ")
    );
    std::fs::File::create(&path)
        .and_then(|mut f| f.write_all(text.as_bytes()))
        .ctx("cli", || format!("write {}", path.display()))?;
    Ok(path)
}
