//! Flag surfaces and their resolution. A `--config` file supplies `key=value`
//! defaults using the long flag names; explicit flags always win.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use simplexnet_core::trainer::StageKind;

use crate::{CliError, CliResult};

/// Shared flag surface of `train` and `sweep`. `--h`, `--m`, and `--stage`
/// accept comma-separated lists; `train` requires singletons.
#[derive(Args, Debug, Clone, Default)]
pub struct RunArgs {
    /// Dataset: `mnist`, `cifar10`, or `raw:<dir>`.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Feature generator: `larger`, `smaller`, or `identity` (no conv stages).
    #[arg(long)]
    pub arch: Option<String>,
    /// Stage kinds: rescaled-regular, rescaled-standard, logistic.
    #[arg(long)]
    pub stage: Option<String>,
    /// Learning rates.
    #[arg(long)]
    pub h: Option<String>,
    /// Target dimensions.
    #[arg(long)]
    pub m: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Minibatch size (default 100).
    #[arg(long)]
    pub minibatch: Option<usize>,
    /// Seed for all random draws (default 7).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Sweep series run in parallel up to this many at once (default 1).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Base path for saved parameters; `.stage`, `.conv`, and `.meta` files
    /// are written next to it.
    #[arg(long)]
    pub params_out: Option<PathBuf>,
    /// `key=value` defaults, one per line; explicit flags override.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Fully-resolved run settings after config-file merge and validation.
#[derive(Debug, Clone)]
pub struct ResolvedRun {
    pub dataset: String,
    pub arch: String,
    pub stages: Vec<StageKind>,
    pub h: Vec<f64>,
    pub m: Vec<usize>,
    pub epochs: usize,
    pub minibatch: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub jobs: usize,
    pub params_out: Option<PathBuf>,
}

impl RunArgs {
    pub fn resolve(mut self) -> CliResult<ResolvedRun> {
        if let Some(path) = self.config.clone() {
            self.merge_file(&path)?;
        }
        let dataset = require(self.dataset, "--dataset")?;
        let arch = require(self.arch, "--arch")?;
        let stages = parse_stage_list(&require(self.stage, "--stage")?)?;
        let h = parse_h_list(&require(self.h, "--h")?)?;
        let m = parse_m_list(&require(self.m, "--m")?)?;
        let epochs = require(self.epochs, "--epochs")?;
        let out = require(self.out, "--out")?;
        let minibatch = self.minibatch.unwrap_or(100);
        if minibatch == 0 {
            return Err(CliError::Usage("--minibatch must be at least 1".into()));
        }
        let jobs = self.jobs.unwrap_or(1);
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        Ok(ResolvedRun {
            dataset,
            arch,
            stages,
            h,
            m,
            epochs,
            minibatch,
            seed: self.seed.unwrap_or(7),
            out,
            jobs,
            params_out: self.params_out,
        })
    }

    fn merge_file(&mut self, path: &Path) -> CliResult<()> {
        for (key, value) in parse_config_file(path)? {
            match key.as_str() {
                "dataset" => fill(&mut self.dataset, value),
                "arch" => fill(&mut self.arch, value),
                "stage" => fill(&mut self.stage, value),
                "h" => fill(&mut self.h, value),
                "m" => fill(&mut self.m, value),
                "epochs" => fill_parsed(&mut self.epochs, &key, value)?,
                "minibatch" => fill_parsed(&mut self.minibatch, &key, value)?,
                "seed" => fill_parsed(&mut self.seed, &key, value)?,
                "jobs" => fill_parsed(&mut self.jobs, &key, value)?,
                "out" => fill(&mut self.out, PathBuf::from(value)),
                "params-out" => fill(&mut self.params_out, PathBuf::from(value)),
                other => {
                    return Err(CliError::Usage(format!(
                        "unknown key '{other}' in config file {}",
                        path.display()
                    )))
                }
            }
        }
        Ok(())
    }
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    /// Dataset: `mnist`, `cifar10`, or `raw:<dir>`.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Base path of saved parameters (as given to `train --params-out`).
    #[arg(long)]
    pub params_in: Option<PathBuf>,
}

impl EvalArgs {
    pub fn resolve(self) -> CliResult<(String, PathBuf)> {
        Ok((
            require(self.dataset, "--dataset")?,
            require(self.params_in, "--params-in")?,
        ))
    }
}

#[derive(Args, Debug, Clone)]
pub struct GradcheckArgs {
    /// Seed for instance draws (default 7).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Clone)]
pub struct DumpArgs {
    /// One of: rescaled-regular, rescaled-standard.
    #[arg(long)]
    pub stage: Option<String>,
    /// Number of classes.
    #[arg(long)]
    pub k: Option<usize>,
    /// Target dimension.
    #[arg(long)]
    pub m: Option<usize>,
    /// Write here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn require<T>(value: Option<T>, flag: &str) -> CliResult<T> {
    value.ok_or_else(|| CliError::Usage(format!("{flag} is required")))
}

fn fill<T>(slot: &mut Option<T>, value: T) {
    if slot.is_none() {
        *slot = Some(value);
    }
}

fn fill_parsed<T: std::str::FromStr>(
    slot: &mut Option<T>,
    key: &str,
    value: String,
) -> CliResult<()> {
    if slot.is_none() {
        let parsed = value
            .parse::<T>()
            .map_err(|_| CliError::Usage(format!("config value '{value}' is invalid for {key}")))?;
        *slot = Some(parsed);
    }
    Ok(())
}

/// Reads `key=value` lines; blank lines and `#` comments are ignored.
/// A `BTreeMap` keeps duplicate detection and iteration order simple.
fn parse_config_file(path: &Path) -> CliResult<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read config file {}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!(
                "line {} of {} is not key=value: '{line}'",
                lineno + 1,
                path.display()
            ))
        })?;
        if map
            .insert(key.trim().to_string(), value.trim().to_string())
            .is_some()
        {
            return Err(CliError::Usage(format!(
                "duplicate key '{}' in config file {}",
                key.trim(),
                path.display()
            )));
        }
    }
    Ok(map)
}

pub fn parse_stage_list(text: &str) -> CliResult<Vec<StageKind>> {
    let stages: Vec<StageKind> = split_list(text)
        .iter()
        .map(|s| {
            s.parse::<StageKind>().map_err(|_| {
                CliError::Usage(format!(
                    "unknown stage '{s}' (expected rescaled-regular, rescaled-standard, or logistic)"
                ))
            })
        })
        .collect::<CliResult<_>>()?;
    if stages.is_empty() {
        return Err(CliError::Usage("--stage list is empty".into()));
    }
    Ok(stages)
}

pub fn parse_h_list(text: &str) -> CliResult<Vec<f64>> {
    let values: Vec<f64> = split_list(text)
        .iter()
        .map(|s| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0)
                .ok_or_else(|| {
                    CliError::Usage(format!("--h entries must be finite and >= 0, got '{s}'"))
                })
        })
        .collect::<CliResult<_>>()?;
    if values.is_empty() {
        return Err(CliError::Usage("--h list is empty".into()));
    }
    Ok(values)
}

pub fn parse_m_list(text: &str) -> CliResult<Vec<usize>> {
    let values: Vec<usize> = split_list(text)
        .iter()
        .map(|s| {
            s.parse::<usize>()
                .ok()
                .filter(|v| *v >= 1)
                .ok_or_else(|| CliError::Usage(format!("--m entries must be positive integers, got '{s}'")))
        })
        .collect::<CliResult<_>>()?;
    if values.is_empty() {
        return Err(CliError::Usage("--m list is empty".into()));
    }
    Ok(values)
}

fn split_list(text: &str) -> Vec<String> {
    text.split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}
