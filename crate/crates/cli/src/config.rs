use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use tuckerwatch::pipeline::PipelineConfig;
use tuckerwatch::synth::{EventSpec, SynthConfig};

use crate::error::CliError;

/// Contents of a `--config` file. Every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub pipeline: PipelineConfig,
    pub synth: SynthConfig,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    /// TOML config file; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output (and intermediate) directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Window start in Unix seconds.
    #[arg(long)]
    pub window_start: Option<i64>,
    #[arg(long)]
    pub window_hours: Option<usize>,
    /// Minimum inter-arrival count for a per-hour HMM fit.
    #[arg(long)]
    pub min_obs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_p: Option<usize>,
    #[arg(long)]
    pub max_q: Option<usize>,
    #[arg(long)]
    pub max_r: Option<usize>,
    /// HOOI convergence tolerance on fit percent.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub sweep_budget: Option<usize>,
    /// Dendrogram cutoff on normalized merge height.
    #[arg(long)]
    pub cutoff: Option<f64>,
    #[arg(long)]
    pub k_mad: Option<f64>,
    #[arg(long)]
    pub min_duration: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Resolved {
    pub input: Option<PathBuf>,
    pub out: PathBuf,
    pub pipeline: PipelineConfig,
}

impl PipelineArgs {
    pub fn resolve(&self, input: Option<PathBuf>) -> Result<Resolved, CliError> {
        let file = FileConfig::load(self.config.as_deref())?;
        let mut p = file.pipeline;
        if let Some(v) = self.window_start {
            p.window_start = Some(v);
        }
        macro_rules! over {
            ($($f:ident => $t:ident),*) => { $(if let Some(v) = self.$f { p.$t = v; })* };
        }
        over!(window_hours => window_hours, min_obs => min_obs, seed => seed, max_p => max_p, max_q => max_q,
              max_r => max_r, tol => tucker_tol, sweep_budget => sweep_budget, cutoff => cutoff,
              k_mad => k_mad, min_duration => min_duration);
        p.validate().map_err(|e| CliError::config(e.to_string()))?;
        let out = self
            .out
            .clone()
            .or(file.output)
            .ok_or_else(|| CliError::config("no output directory; pass --out or set `output` in the config"))?;
        Ok(Resolved {
            input: input.or(file.input),
            out,
            pipeline: p,
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub n_users: Option<usize>,
    #[arg(long)]
    pub window_hours: Option<usize>,
    #[arg(long)]
    pub window_start: Option<i64>,
    #[arg(long)]
    pub base_rate: Option<f64>,
    #[arg(long)]
    pub burst_rate: Option<f64>,
    /// Indices of persistently anomalous users.
    #[arg(long, value_delimiter = ',')]
    pub anomalous: Option<Vec<usize>>,
    /// Planted event as `start:end:fraction` (hours inclusive); repeatable.
    #[arg(long = "event", value_parser = parse_event)]
    pub events: Vec<EventSpec>,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn parse_event(s: &str) -> Result<EventSpec, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [a, b, f] = parts.as_slice() else {
        return Err(format!("expected start:end:fraction, got {s:?}"));
    };
    Ok(EventSpec {
        start_hour: a.parse().map_err(|e| format!("start hour: {e}"))?,
        end_hour: b.parse().map_err(|e| format!("end hour: {e}"))?,
        affected_fraction: f.parse().map_err(|e| format!("fraction: {e}"))?,
    })
}

impl SynthArgs {
    pub fn resolve(&self) -> Result<(SynthConfig, PathBuf), CliError> {
        let file = FileConfig::load(self.config.as_deref())?;
        let mut s = file.synth;
        macro_rules! over {
            ($($f:ident),*) => { $(if let Some(v) = self.$f.clone() { s.$f = v; })* };
        }
        over!(n_users, window_hours, window_start, base_rate, burst_rate, seed);
        if let Some(v) = &self.anomalous {
            s.persistent_anomalous = v.clone();
        }
        if !self.events.is_empty() {
            s.events = self.events.clone();
        }
        s.validate().map_err(|e| CliError::config(e.to_string()))?;
        let out = self
            .out
            .clone()
            .or(file.output)
            .ok_or_else(|| CliError::config("no output directory; pass --out or set `output` in the config"))?;
        Ok((s, out))
    }
}
