//! Command-line driver: dataset generation, pretraining, fine-tuning,
//! evaluation, rendering and gradient self-check.
//!
//! Exit codes: 0 success, 1 usage error, 2 configuration error, 3 runtime
//! error (missing or malformed data files, training failures, failed checks).

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{FinetuneConfig, InitMode, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "lusb", version, about = "B-line detection on synthetic lung-ultrasound phantoms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML run configuration; defaults apply to anything it leaves out.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Config overrides as `--key value`, where key is `field` or `section.field`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a phantom dataset with annotations and a train/eval split.
    Gen(Common),
    /// Contrastive pretraining of the encoder on the training images.
    Pretrain(Common),
    /// Fine-tune the detector on the labeled training images.
    Finetune(Common),
    /// Score the detector on the eval split and write the metrics report.
    Eval {
        /// Evaluate the ground truth itself instead of the trained detector.
        #[arg(long)]
        oracle: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Draw ground truth and detections of the eval split.
    Render(Common),
    /// Finite-difference check of every loss gradient.
    Gradcheck {
        /// Random points per loss.
        #[arg(long, default_value_t = 100)]
        points: usize,
        #[command(flatten)]
        common: Common,
    },
}

/// Splits `--key value` / `--key=value` tokens into pairs.
fn parse_overrides(tokens: &[String]) -> Result<(Vec<(String, String)>, Option<PathBuf>), CliError> {
    let mut pairs = Vec::new();
    let mut config = None;
    let mut it = tokens.iter();
    while let Some(tok) = it.next() {
        let key = tok
            .strip_prefix("--")
            .ok_or_else(|| CliError::Usage(format!("expected --key value, got {tok:?}")))?;
        let (key, value) = match key.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it.next().ok_or_else(|| CliError::Usage(format!("--{key} needs a value")))?;
                (key.to_string(), v.clone())
            }
        };
        if key == "config" {
            config = Some(PathBuf::from(value));
        } else {
            pairs.push((key.replace('-', "_"), value));
        }
    }
    Ok((pairs, config))
}

fn resolve(common: &Common) -> Result<RunConfig, CliError> {
    let (pairs, late_config) = parse_overrides(&common.overrides)?;
    let path = late_config.or_else(|| common.config.clone());
    let cfg = RunConfig::resolve(path.as_deref(), &pairs)?;
    eprintln!("# resolved config {}\n{}", cfg.hash(), cfg.to_toml());
    Ok(cfg)
}

fn dispatch(command: &Command) -> Result<String, CliError> {
    match command {
        Command::Gen(c) => commands::gen(&resolve(c)?),
        Command::Pretrain(c) => commands::pretrain_cmd(&resolve(c)?),
        Command::Finetune(c) => commands::finetune_cmd(&resolve(c)?),
        Command::Eval { oracle, common } => commands::eval_cmd(&resolve(common)?, *oracle),
        Command::Render(c) => commands::render_cmd(&resolve(c)?),
        Command::Gradcheck { points, common } => commands::gradcheck(&resolve(common)?, *points),
    }
}

/// Runs the command line `args` (program name first) and returns the exit
/// status.
pub fn run(args: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(&cli.command) {
        Ok(msg) => {
            print!("{msg}");
            if !msg.ends_with('\n') {
                println!();
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn override_tokens() {
        let (p, c) = parse_overrides(&s(&["--count", "5", "--detect.lr=0.1", "--config", "a.toml"])).unwrap();
        assert_eq!(p, vec![("count".into(), "5".into()), ("detect.lr".into(), "0.1".into())]);
        assert_eq!(c, Some(PathBuf::from("a.toml")));
        assert!(matches!(parse_overrides(&s(&["count", "5"])), Err(CliError::Usage(_))));
        assert!(matches!(parse_overrides(&s(&["--count"])), Err(CliError::Usage(_))));
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(s(&["lusb", "bogus"])), EXIT_USAGE);
        assert_eq!(run(s(&["lusb"])), EXIT_USAGE);
        assert_eq!(run(s(&["lusb", "--help"])), EXIT_OK);
    }

    #[test]
    fn clap_accepts_flags_then_overrides() {
        let cli = Cli::try_parse_from(s(&["lusb", "eval", "--oracle", "--seed", "3"])).unwrap();
        let Command::Eval { oracle, common } = cli.command else { panic!() };
        assert!(oracle);
        assert_eq!(common.overrides, s(&["--seed", "3"]));
    }
}
