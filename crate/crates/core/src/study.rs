//! Replicated simulation studies: simulate genealogies from a scenario, fit
//! each model on a fixed grid and summarize the metrics against the truth.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{calibrate_with_alpha, default_theta1_prior, DEFAULT_ALPHA};
use crate::coalescent::CoalescentLikelihood;
use crate::error::{Error, Result};
use crate::evaluate::{metrics, Metrics};
use crate::field_priors::{FieldModel, ModelKind};
use crate::genealogy::Genealogy;
use crate::grid::{build_grid, partition};
use crate::rng::stream;
use crate::samplers::{run_chain, ChainConfig, PosteriorChain};
use crate::simulate::{sample_schedule, simulate_coalescent, Scenario, SimulatedGenealogy, SimulationOptions, Trajectory};

const SIMULATION_TAG: u64 = 0x51;
const FIT_TAG: u64 = 0xF1;
pub const PILOT_REPLICATE: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub scenario: Scenario,
    pub replicates: usize,
    pub sample_size: usize,
    pub samples_at_zero: usize,
    /// Later samples are uniform on `[0, horizon]`.
    pub horizon: f64,
    /// Boundary `T` of the shared grid.
    pub boundary: f64,
    pub cells: usize,
    pub models: Vec<ModelKind>,
    pub chain: ChainConfig,
    pub alpha: f64,
}

impl StudyConfig {
    /// Scenario defaults with the given replicate count, grid size and chains.
    pub fn for_scenario(scenario: Scenario, replicates: usize, cells: usize, chain: ChainConfig) -> Self {
        let d = scenario.defaults();
        StudyConfig {
            scenario,
            replicates,
            sample_size: d.sample_size,
            samples_at_zero: d.samples_at_zero,
            horizon: d.horizon,
            boundary: d.boundary,
            cells,
            models: ModelKind::ALL.to_vec(),
            chain,
            alpha: DEFAULT_ALPHA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::arg("a study needs at least one replicate"));
        }
        if self.models.is_empty() {
            return Err(Error::arg("a study needs at least one model"));
        }
        if self.samples_at_zero == 0 || self.samples_at_zero > self.sample_size || self.sample_size < 3 {
            return Err(Error::arg(format!(
                "invalid sample sizes: n = {}, n_0 = {}",
                self.sample_size, self.samples_at_zero
            )));
        }
        self.chain.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub model: ModelKind,
    pub zeta: f64,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub model: Option<ModelKind>,
    pub message: String,
}

/// Mean metrics over the successful replicates of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: ModelKind,
    pub replicates: usize,
    #[serde(rename = "MAD")]
    pub mad: f64,
    #[serde(rename = "MCIW")]
    pub mciw: f64,
    #[serde(rename = "Env")]
    pub envelope: f64,
    #[serde(rename = "MASV")]
    pub masv: f64,
    #[serde(rename = "TMASV")]
    pub tmasv: f64,
    pub p_eff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub zeta: Vec<(ModelKind, f64)>,
    pub results: Vec<ReplicateResult>,
    pub failures: Vec<ReplicateFailure>,
    pub summary: Vec<SummaryRow>,
}

impl StudyResult {
    pub fn row(&self, model: ModelKind) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.model == model)
    }
}

/// Simulates replicate `index` of a study; `index = u64::MAX` is the pilot
/// data set used for calibration.
pub fn simulate_replicate(cfg: &StudyConfig, seed: u64, index: u64) -> Result<Genealogy> {
    Ok(simulate_replicate_tree(cfg, seed, index)?.genealogy)
}

/// As [`simulate_replicate`], keeping the topology and tip dates.
pub fn simulate_replicate_tree(cfg: &StudyConfig, seed: u64, index: u64) -> Result<SimulatedGenealogy> {
    let mut rng = stream(seed, &[SIMULATION_TAG, index]);
    let schedule = sample_schedule(
        cfg.samples_at_zero,
        cfg.sample_size - cfg.samples_at_zero,
        cfg.horizon,
        &mut rng,
    )?;
    let options = SimulationOptions {
        n_min: Some(cfg.scenario.known_minimum()),
        ..SimulationOptions::default()
    };
    simulate_coalescent(&schedule, &Trajectory::Scenario(cfg.scenario), &options, &mut rng)
}

/// Fits one model to one genealogy on the study grid and returns the pooled
/// posterior and the true `ln N_e` at the cell midpoints.
pub fn fit_replicate(
    cfg: &StudyConfig,
    g: &Genealogy,
    kind: ModelKind,
    zeta: f64,
    seed: u64,
) -> Result<(PosteriorChain, Vec<f64>)> {
    let grid = build_grid(cfg.cells, cfg.boundary, Some(g.tmrca()))?;
    let part = partition(g, &grid)?;
    let lik = CoalescentLikelihood::new(&part);
    let (mu, sigma) = default_theta1_prior(g)?;
    let model = FieldModel::new(kind, mu, sigma, zeta)?;
    let chains = run_chain(&model, &lik, &ChainConfig { seed, ..cfg.chain })?;
    let pooled = PosteriorChain::pool(&chains)?;
    let truth = Trajectory::Scenario(cfg.scenario).log_on_grid(part.grid());
    Ok((pooled, truth))
}

/// Runs the study. `zeta` is calibrated per model on a separate pilot data
/// set; replicate failures are recorded and the study continues.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyResult> {
    cfg.validate()?;
    let seed = cfg.chain.seed;
    let pilot = simulate_replicate(cfg, seed, PILOT_REPLICATE)?;
    let (mu, sigma) = default_theta1_prior(&pilot)?;
    let zeta: Vec<(ModelKind, f64)> = cfg
        .models
        .iter()
        .map(|&kind| {
            let m = FieldModel::new(kind, mu, sigma, 1.0)?;
            Ok((kind, calibrate_with_alpha(&pilot, &m, cfg.cells, cfg.alpha)?.zeta))
        })
        .collect::<Result<_>>()?;

    let outcomes: Vec<(Vec<ReplicateResult>, Vec<ReplicateFailure>)> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let mut ok = Vec::new();
            let mut failed = Vec::new();
            let g = match simulate_replicate(cfg, seed, r as u64) {
                Ok(g) => g,
                Err(e) => {
                    failed.push(ReplicateFailure {
                        replicate: r,
                        model: None,
                        message: e.to_string(),
                    });
                    return (ok, failed);
                }
            };
            for (m, &(kind, z)) in zeta.iter().enumerate() {
                let fit_seed = crate::rng::derive_seed(seed, &[FIT_TAG, r as u64, m as u64]);
                let outcome = fit_replicate(cfg, &g, kind, z, fit_seed)
                    .and_then(|(post, truth)| metrics(&post, Some(&truth)));
                match outcome {
                    Ok(s) => ok.push(ReplicateResult {
                        replicate: r,
                        model: kind,
                        zeta: z,
                        metrics: s.metrics,
                    }),
                    Err(e) => failed.push(ReplicateFailure {
                        replicate: r,
                        model: Some(kind),
                        message: e.to_string(),
                    }),
                }
            }
            (ok, failed)
        })
        .collect();

    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (ok, failed) in outcomes {
        results.extend(ok);
        failures.extend(failed);
    }
    let summary = summarize(&cfg.models, &results);
    Ok(StudyResult {
        zeta,
        results,
        failures,
        summary,
    })
}

/// Per-model means of each metric. Models without successful replicates get
/// NaN entries.
pub fn summarize(models: &[ModelKind], results: &[ReplicateResult]) -> Vec<SummaryRow> {
    models
        .iter()
        .map(|&model| {
            let rows: Vec<&Metrics> = results.iter().filter(|r| r.model == model).map(|r| &r.metrics).collect();
            let avg = |f: &dyn Fn(&Metrics) -> Option<f64>| {
                let v: Vec<f64> = rows.iter().filter_map(|m| f(m)).collect();
                if v.is_empty() {
                    f64::NAN
                } else {
                    v.iter().sum::<f64>() / v.len() as f64
                }
            };
            SummaryRow {
                model,
                replicates: rows.len(),
                mad: avg(&|m| m.mad),
                mciw: avg(&|m| Some(m.mciw)),
                envelope: avg(&|m| m.envelope),
                masv: avg(&|m| Some(m.masv)),
                tmasv: avg(&|m| m.tmasv),
                p_eff: avg(&|m| m.p_eff),
            }
        })
        .collect()
}
