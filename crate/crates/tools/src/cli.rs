//! Argument parsing and dispatch for the `sme` binary.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::{self, split_list, Context};
use crate::config::RunConfig;
use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "sme",
    version,
    about = "Tiny-defect detection toolkit: data, gradient checks, training, evaluation, ablation",
    after_help = "Every subcommand writes summary.csv and the effective config.toml under --out."
)]
pub struct Cli {
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Global seed; overrides `[run] seed` of the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML run configuration; unknown keys are rejected.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Also write SVG plots where the subcommand has any.
    #[arg(long, global = true, default_value_t = false)]
    pub plot: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic dataset (PGM images, label files, split manifests).
    GenData {
        /// Draw only this class (written as class 0).
        #[arg(long)]
        class: Option<String>,
    },
    /// Per-class count, proportion, mean area and mean area fraction, plus the
    /// area-fraction histogram.
    Stats {
        /// Dataset directory written by gen-data [default: generate from config].
        #[arg(long)]
        data: Option<PathBuf>,
        /// train, val, test or all.
        #[arg(long, default_value = "all")]
        split: String,
    },
    /// Finite-difference gradient checks of every block; exits 1 on failure.
    Gradcheck {
        /// Random instances per block [default: config, 20].
        #[arg(long)]
        instances: Option<usize>,
    },
    /// IoU and NWD of a square against copies shifted along x.
    Sensitivity {
        /// Comma-separated square sides in pixels [default: 6,12,24,36].
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<f64>>,
        /// Largest offset in pixels; offsets step by 1 from 0 [default: 12].
        #[arg(long)]
        max_offset: Option<u32>,
    },
    /// Train the detector; writes metrics.csv, best.smec and last.smec.
    Train {
        /// Dataset directory [default: generate from config].
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Evaluate a checkpoint; writes predictions.csv and report.csv.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// train, val or test.
        #[arg(long, default_value = "test")]
        split: String,
        /// Dataset directory [default: regenerate from the checkpoint's config].
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train the four ablation rows and compare them on the test split.
    Ablate {
        /// Dataset directory [default: generate from config].
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Multiply-accumulate counts of the attention block and the detector variants.
    Flops,
}

impl Cli {
    pub fn context(&self) -> Result<Context> {
        let mut config = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.run.seed = seed;
        }
        if let Command::Sensitivity { sizes, max_offset } = &self.command {
            if let Some(s) = sizes {
                config.sensitivity.sizes = s.clone();
            }
            if let Some(m) = max_offset {
                config.sensitivity.max_offset = *m;
            }
        }
        if let Command::Gradcheck { instances: Some(n) } = &self.command {
            config.gradcheck.instances = *n;
        }
        config.validate()?;
        Ok(Context {
            out: self.out.clone(),
            config,
            plot: self.plot,
        })
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let ctx = cli.context()?;
    match &cli.command {
        Command::GenData { class } => commands::gen_data(&ctx, class.as_deref()).map(drop),
        Command::Stats { data, split } => commands::stats(&ctx, data.as_deref(), &split_list(split)?),
        Command::Gradcheck { .. } => commands::gradcheck(&ctx, None).map(drop),
        Command::Sensitivity { .. } => commands::sensitivity(&ctx),
        Command::Train { data } => commands::train_cmd(&ctx, data.as_deref()).map(drop),
        Command::Eval { checkpoint, split, data } => {
            let s = match split_list(split)?.as_slice() {
                [one] => *one,
                _ => return Err(Error::Config("eval needs a single split".into())),
            };
            commands::eval_cmd(&ctx, checkpoint, s, data.as_deref()).map(drop)
        }
        Command::Ablate { data } => commands::ablate(&ctx, data.as_deref()).map(drop),
        Command::Flops => commands::flops(&ctx).map(drop),
    }
}

/// Parses `args` and runs; returns the process exit code: 0 on success, 2 on
/// usage errors (after printing usage), 1 on runtime failures.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn parser_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(main_with_args(["sme", "frobnicate"]), 2);
        assert_eq!(main_with_args(["sme"]), 2);
        assert_eq!(main_with_args(["sme", "flops", "--bogus"]), 2);
        assert_eq!(main_with_args(["sme", "--help"]), 0);
    }

    #[test]
    fn runtime_errors_exit_1() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("o");
        let missing = dir.path().join("nope.toml");
        let args = ["sme", "flops", "--out", out.to_str().unwrap(), "--config", missing.to_str().unwrap()];
        assert_eq!(main_with_args(args), 1);
        let bad = dir.path().join("bad.toml");
        std::fs::write(&bad, "[train]\nepoch = 2\n").unwrap();
        let args = ["sme", "flops", "--out", out.to_str().unwrap(), "--config", bad.to_str().unwrap()];
        assert_eq!(main_with_args(args), 1);
    }

    #[test]
    fn flags_override_config() {
        let cli = Cli::try_parse_from(["sme", "sensitivity", "--sizes", "6,36", "--max-offset", "4", "--seed", "9"]).unwrap();
        let ctx = cli.context().unwrap();
        assert_eq!(ctx.config.sensitivity.sizes, vec![6.0, 36.0]);
        assert_eq!(ctx.config.sensitivity.max_offset, 4);
        assert_eq!(ctx.config.run.seed, 9);
    }
}
