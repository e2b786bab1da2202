//! Command-line pipeline driver: propose, collect, train, eval, diversity
//! and report over one output tree.

pub mod commands;
pub mod config;
pub mod manifest;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

use crate::config::{BackendKind, RunConfig};

/// Errors in what the user asked for (as opposed to what happened while
/// doing it). These exit with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(name = "bbsea", version, about = "Tabletop task proposal, demonstration collection and distillation")]
pub struct Cli {
    /// Run configuration (TOML). Flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendKind>,
    /// Restrict the stage to one scene id.
    #[arg(long, global = true)]
    pub scene: Option<String>,
    /// Leave the three ranges out of serialized nodes.
    #[arg(long, global = true)]
    pub no_bbox: bool,
    /// Leave the ranges and the position out of serialized nodes.
    #[arg(long, global = true)]
    pub no_bbox_positions: bool,
    /// Output root; each stage writes a subdirectory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Propose tasks for each scene and precheck their plans.
    Propose,
    /// Run the collection campaign, resuming an existing pool.
    Collect,
    /// Distil the pool into a policy checkpoint.
    Train,
    /// Roll out the checkpoint on the pool's tasks.
    Eval,
    /// Distance matrix, embedding and area spans of task lists.
    Diversity,
    /// Collate existing stage outputs.
    Report,
}

pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(b) = cli.backend {
        cfg.backend = b;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    cfg.strip_bbox |= cli.no_bbox;
    cfg.strip_positions |= cli.no_bbox_positions;
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    let scene = cli.scene.as_deref();
    match cli.command {
        Command::Propose => {
            let dir = commands::cmd_propose(&cfg, scene)?;
            println!("tasks written to {}", dir.display());
        }
        Command::Collect => {
            let s = commands::cmd_collect(&cfg, scene)?;
            println!(
                "pool {}: {} resumed, {} new trajectories",
                s.pool.display(),
                s.resumed,
                s.written
            );
            if !s.failed.is_empty() {
                println!("failed tasks:");
                for (what, why) in &s.failed {
                    println!("  {what} ({why})");
                }
            }
            if s.scene_errors > 0 {
                anyhow::bail!("{} scene(s) failed; outputs for the rest were written", s.scene_errors);
            }
        }
        Command::Train => {
            let p = commands::cmd_train(&cfg)?;
            println!("checkpoint written to {}", p.display());
        }
        Command::Eval => {
            let dir = commands::cmd_eval(&cfg, scene)?;
            println!("rates written to {}", dir.join("rates.csv").display());
        }
        Command::Diversity => {
            let dir = commands::cmd_diversity(&cfg)?;
            println!("diversity tables written to {}", dir.display());
        }
        Command::Report => print!("{}", commands::cmd_report(&cfg)?),
    }
    Ok(())
}

/// Process exit status for a failed run.
pub fn exit_code(e: &anyhow::Error) -> i32 {
    if e.chain().any(|c| c.is::<UsageError>()) {
        2
    } else {
        1
    }
}
