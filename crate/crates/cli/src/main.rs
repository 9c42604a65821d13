mod commands;
mod config;
mod data;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "sbtm", version, about = "Neural topic models with stick-breaking priors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the vocabulary, the split and the time-slice manifest.
    Prep(Common),
    /// Train a model on the prepared corpus.
    Train(Common),
    /// Perplexity, coherence, diversity and quality.
    Eval(Common),
    /// Top words per topic (and per slice for dynamic models).
    Topics(Common),
    /// Nearest words or topics in embedding space.
    Neighbors(Common),
    /// Word probabilities across time slices as CSV.
    Trajectories(Common),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (Command::Prep(c)
    | Command::Train(c)
    | Command::Eval(c)
    | Command::Topics(c)
    | Command::Neighbors(c)
    | Command::Trajectories(c)) = &cli.command;
    let config = RunConfig::load(&c.config, c.seed, c.out.as_deref())?;
    config.write_resolved()?;
    match cli.command {
        Command::Prep(_) => {
            let m = data::prep(&config)?;
            let mut lines = vec![
                format!("documents  {}", m.documents),
                format!(
                    "split      train {} / validation {} / test {} (excluded {}, empty {})",
                    m.split.train.len(),
                    m.split.validation.len(),
                    m.split.test.len(),
                    m.split.excluded.len(),
                    m.split.empty.len()
                ),
                format!("vocabulary {} words, hash {}", m.vocabulary.size, m.vocabulary.hash),
                format!(
                    "lengths    Poisson lambda {:.3}, KS {:.4}",
                    m.length_fit.lambda, m.length_fit.ks_statistic
                ),
            ];
            if let Some(s) = &m.slices {
                lines.push(format!("slices     {}", s.count));
            }
            commands::print_lines(lines)
        }
        Command::Train(_) => {
            let report = commands::train(&config)?;
            let lines = report.epochs.iter().map(|m| {
                format!(
                    "epoch {:>4}  elbo {:>12.4}  val ppl {:>10}  topics {}",
                    m.epoch,
                    m.elbo,
                    m.val_perplexity.map_or("-".to_string(), |p| format!("{p:.3}")),
                    m.effective_topics
                )
            });
            commands::print_lines(lines.chain(std::iter::once(format!(
                "checkpoint {} (best epoch {})",
                commands::checkpoint_path(&config).display(),
                report.best_epoch.map_or("-".to_string(), |e| e.to_string())
            ))))
        }
        Command::Eval(_) => {
            let out = commands::eval(&config)?;
            let text = serde_json::to_string_pretty(&out).map_err(|e| CliError::Validation(e.to_string()))?;
            commands::print_lines([text])
        }
        Command::Topics(_) => {
            let rows = commands::topics(&config)?;
            let mut lines: Vec<String> = Vec::new();
            let mut current = None;
            for r in rows {
                if current != Some((r.topic, r.slice)) {
                    current = Some((r.topic, r.slice));
                    lines.push(format!("topic {} slice {}:", r.topic, r.slice));
                }
                if let Some(last) = lines.last_mut() {
                    last.push(' ');
                    last.push_str(&r.word);
                }
            }
            commands::print_lines(lines)
        }
        Command::Neighbors(_) => {
            let rows = commands::neighbors(&config)?;
            commands::print_lines(
                rows.into_iter()
                    .map(|r| format!("{}\t{}\t{}\t{:.4}", r.query, r.rank, r.neighbor, r.similarity)),
            )
        }
        Command::Trajectories(_) => {
            let rows = commands::trajectories(&config)?;
            commands::print_lines([format!(
                "{} rows written to {}",
                rows.len(),
                config.out.join(commands::TRAJECTORIES_FILE).display()
            )])
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sbtm: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
