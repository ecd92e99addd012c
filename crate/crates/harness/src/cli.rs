//! Command-line front end for the `glap` binary.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::experiment::{run_alpha_sweep, run_rank_study, run_shift_study, run_stage, RunOptions, Stage};
use crate::record::ResultsRecord;

#[derive(Debug, Parser)]
#[command(name = "glap", version, about = "Curvature-aware posterior sampling experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the MAP weights and write one checkpoint per seed.
    Train(CommonArgs),
    /// Fit (or reuse) the MAP weights and draw posterior samples.
    Sample(CommonArgs),
    /// Full pipeline: MAP, posterior, predictive metrics.
    Evaluate(CommonArgs),
    /// GGN rank versus sampled-Laplace train accuracy over data subsets.
    RankStudy(CommonArgs),
    /// Test metrics and entropy AUROC under input rotation.
    ShiftStudy(CommonArgs),
    /// Repeat the pipeline over a grid of prior precisions.
    SweepAlpha(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML experiment config.
    #[arg(long)]
    pub config: PathBuf,
    /// Override any config key, e.g. `--set sampler.alpha=5` or `--set seeds=[1,2]`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Shorthand for `--set output_dir=...`.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Shorthand for `--set seeds=[...]`.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Load existing checkpoints from the output directory instead of retraining.
    #[arg(long)]
    pub reuse_checkpoints: bool,
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Sets `dotted.key = value` inside a TOML table, creating tables on the way.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override `{assignment}` is not KEY=VALUE")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(format!("bad override key `{key}`")));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("override `{key}`: `{part}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl CommonArgs {
    pub fn load(&self) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(&self.config).map_err(|e| Error::io(&self.config, e))?;
        let parse_err = |message: String| Error::Parse {
            path: self.config.clone(),
            message,
        };
        let mut table: toml::Table = toml::from_str(&text).map_err(|e| parse_err(e.to_string()))?;
        for o in &self.overrides {
            apply_override(&mut table, o)?;
        }
        if let Some(dir) = &self.output_dir {
            table.insert("output_dir".into(), toml::Value::String(dir.display().to_string()));
        }
        if let Some(seeds) = &self.seeds {
            let arr = seeds.iter().map(|&s| toml::Value::Integer(s as i64)).collect();
            table.insert("seeds".into(), toml::Value::Array(arr));
        }
        let cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| parse_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn summary(record: &ResultsRecord) -> String {
    let mut out = format!("{} {}\n", record.kind, record.provenance.config_hash);
    for (k, s) in &record.metrics {
        out.push_str(&format!("  {k}: {:.6} +- {:.6}\n", s.mean, s.std));
    }
    out
}

type Runner = fn(&ExperimentConfig, RunOptions) -> Result<ResultsRecord>;

pub fn execute(cli: &Cli) -> Result<ResultsRecord> {
    let (args, run): (&CommonArgs, Runner) = match &cli.command {
        Command::Train(a) => (a, |c, o| Ok(run_stage(c, Stage::Train, o)?.0)),
        Command::Sample(a) => (a, |c, o| Ok(run_stage(c, Stage::Sample, o)?.0)),
        Command::Evaluate(a) => (a, |c, o| Ok(run_stage(c, Stage::Evaluate, o)?.0)),
        Command::RankStudy(a) => (a, run_rank_study),
        Command::ShiftStudy(a) => (a, run_shift_study),
        Command::SweepAlpha(a) => (a, run_alpha_sweep),
    };
    let cfg = args.load()?;
    let opts = RunOptions {
        reuse_checkpoints: args.reuse_checkpoints,
        dry: false,
    };
    run(&cfg, opts)
}

/// Parses arguments, runs the command and maps errors to exit codes.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(&cli) {
        Ok(record) => {
            print!("{}", summary(&record));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_create_nested_keys() {
        let mut t: toml::Table = toml::from_str("[sampler]\nalpha = 1.0").unwrap();
        apply_override(&mut t, "sampler.alpha=5").unwrap();
        apply_override(&mut t, "eval.predictive=nn").unwrap();
        apply_override(&mut t, "seeds=[1, 2]").unwrap();
        assert_eq!(t["sampler"]["alpha"].as_integer(), Some(5));
        assert_eq!(t["eval"]["predictive"].as_str(), Some("nn"));
        assert_eq!(t["seeds"].as_array().unwrap().len(), 2);
        assert!(apply_override(&mut t, "novalue").is_err());
        assert!(apply_override(&mut t, "seeds.x=1").is_err());
    }
}
