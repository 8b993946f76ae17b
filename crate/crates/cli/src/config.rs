//! The run configuration: one JSON document per run, with command-line flags
//! taking precedence over the file.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use hsmrf::field_priors::ModelKind;
use hsmrf::samplers::ChainConfig;
use hsmrf::simulate::Scenario;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Every field is optional so a partial document can be completed by flags
/// and defaults. The resolved form is written back into each run manifest.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Newick tree with branch lengths in time units.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tree: Option<PathBuf>,

    /// CSV of tip label and backward sampling time.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dates: Option<PathBuf>,

    /// Field prior: G1, G2, H1 or H2.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelKind>,

    /// Comma-separated models for `study` and `compare`.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub models: Option<Vec<ModelKind>>,

    /// Number of grid cells H.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cells: Option<usize>,

    /// Explicit grid boundary T.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundary: Option<f64>,

    /// Quantile of the published TMRCA distribution used as T.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_t: Option<f64>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tmrca_median: Option<f64>,

    /// Published 95% interval for the TMRCA, as `lo,hi`.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tmrca_ci: Option<Vec<f64>>,

    /// Prior mean of theta_1.
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,

    /// Prior sd of theta_1.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,

    /// Global-scale hyperparameter; calibrated from the skyline when absent.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zeta: Option<f64>,

    /// Tail probability of the calibration bound.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_burnin: Option<usize>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thin: Option<usize>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_chains: Option<usize>,

    /// Master seed.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,

    /// Simulation scenario: BN, BB or BE.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<Scenario>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reps: Option<usize>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_size: Option<usize>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples_at_zero: Option<usize>,

    /// Later samples are uniform on `[0, horizon]`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,

    /// True `ln N_e` per cell, as written by `simulate`. `evaluate` takes one
    /// per posterior, or a single file shared by all.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<Vec<PathBuf>>,

    /// Posterior CSV files for `evaluate`.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub posterior: Option<Vec<PathBuf>>,

    /// Precomputed marginal likelihoods for `compare`, as `name=value`.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_ml: Option<Vec<String>>,

    /// Number of steppingstone power posteriors.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stones: Option<usize>,

    /// Shape `a` of the stone powers `(k/K)^(1/a)`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_shape: Option<f64>,
}

pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_ALPHA_T: f64 = 0.001;
pub const DEFAULT_STONES: usize = 50;
pub const DEFAULT_BETA_SHAPE: f64 = 0.2;
pub const DEFAULT_MODEL: &str = "H1";

macro_rules! overlay {
    ($dst:ident, $src:ident; $($field:ident),* $(,)?) => {
        $( if $dst.$field.is_none() { $dst.$field = $src.$field; } )*
    };
}

impl RunConfig {
    /// Reads a config document. A run manifest is accepted too, in which case
    /// its embedded resolved config is used.
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("config {} is not valid JSON: {e}", path.display())))?;
        let value = match value {
            serde_json::Value::Object(mut map) if map.contains_key("manifest_version") => {
                map.remove("config").unwrap_or_default()
            }
            other => other,
        };
        serde_json::from_value(value)
            .map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))
    }

    /// Fields set in `self` win; the rest come from `base`.
    pub fn over(mut self, base: RunConfig) -> RunConfig {
        overlay!(self, base;
            tree, dates, model, models, cells, boundary, alpha_t, tmrca_median, tmrca_ci,
            mu, sigma, zeta, alpha, n_burnin, n_samples, thin, n_chains, seed, scenario,
            reps, sample_size, samples_at_zero, horizon, truth, posterior, log_ml, stones, beta_shape);
        self
    }

    /// Makes input paths absolute so the manifest does not depend on the
    /// working directory.
    pub fn absolutize(&mut self) -> Result<(), CliError> {
        let singles = [&mut self.tree, &mut self.dates].into_iter().flatten();
        let lists = [&mut self.truth, &mut self.posterior].into_iter().flatten().flatten();
        for p in singles.chain(lists) {
            *p = std::path::absolute(&*p)
                .map_err(|e| CliError::usage(format!("bad path {}: {e}", p.display())))?;
        }
        Ok(())
    }

    pub fn chain(&mut self) -> Result<ChainConfig, CliError> {
        let d = ChainConfig::default();
        let cfg = ChainConfig {
            n_burnin: *self.n_burnin.get_or_insert(d.n_burnin),
            n_samples: *self.n_samples.get_or_insert(d.n_samples),
            thin: *self.thin.get_or_insert(d.thin),
            n_chains: *self.n_chains.get_or_insert(d.n_chains),
            seed: *self.seed.get_or_insert(DEFAULT_SEED),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn model(&mut self) -> ModelKind {
        *self
            .model
            .get_or_insert_with(|| DEFAULT_MODEL.parse().expect("valid default model"))
    }

    pub fn models(&mut self) -> Vec<ModelKind> {
        self.models.get_or_insert_with(|| ModelKind::ALL.to_vec()).clone()
    }

    pub fn tmrca_ci(&self) -> Result<Option<(f64, f64)>, CliError> {
        match self.tmrca_ci.as_deref() {
            None => Ok(None),
            Some(&[lo, hi]) => Ok(Some((lo, hi))),
            Some(_) => Err(CliError::usage("tmrca_ci must have exactly two entries")),
        }
    }

    pub fn require_tree(&self) -> Result<(&Path, &Path), CliError> {
        match (&self.tree, &self.dates) {
            (Some(t), Some(d)) => Ok((t, d)),
            _ => Err(CliError::usage("this command needs both --tree and --dates")),
        }
    }
}
