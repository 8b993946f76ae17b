//! Elliptical-slice-within-Gibbs sampling of the field and its scales.
//!
//! Each iteration makes one elliptical slice update of the whole field given
//! the scales, then one Gibbs sweep over the scales and auxiliaries in the
//! order `lambda^2`, `eta^2`, `psi`, `xi`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coalescent::FieldLikelihood;
use crate::error::{Error, Result};
use crate::field_priors::{
    increment_variances, increment_weight, increments, sample_field, Family, FieldModel, LatentState,
};
use crate::rng::{stream, SimRng};
use crate::stats::inverse_gamma;

/// Upper bound on bracket shrinks in one slice update.
pub const MAX_SHRINKS: usize = 1000;

/// Scale-only Gibbs sweeps applied to a data-driven starting field.
pub const INITIAL_SCALE_SWEEPS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    pub n_burnin: usize,
    pub n_samples: usize,
    pub thin: usize,
    pub n_chains: usize,
    pub seed: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            n_burnin: 1000,
            n_samples: 500,
            thin: 1,
            n_chains: 4,
            seed: 1,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.thin == 0 || self.n_chains == 0 {
            return Err(Error::arg("n_samples, thin and n_chains must be positive"));
        }
        Ok(())
    }

    pub fn iterations(&self) -> usize {
        self.n_burnin + self.n_samples * self.thin
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: u64,
    pub shrinks: u64,
    pub likelihood_evaluations: u64,
}

impl Diagnostics {
    fn absorb(&mut self, other: &Diagnostics) {
        self.iterations += other.iterations;
        self.shrinks += other.shrinks;
        self.likelihood_evaluations += other.likelihood_evaluations;
    }
}

/// Retained draws. Rows are draws; `chain` records which chain each row came
/// from so pooled output keeps its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorChain {
    pub cells: usize,
    pub chain: Vec<usize>,
    pub theta_draws: Vec<Vec<f64>>,
    /// Global scale `gamma = eta zeta` per draw.
    pub global_scale: Vec<f64>,
    /// Untempered log-likelihood per draw.
    pub log_lik: Vec<f64>,
    pub pointwise_ll: Vec<Vec<f64>>,
    pub diagnostics: Diagnostics,
}

impl PosteriorChain {
    fn with_capacity(cells: usize, draws: usize) -> Self {
        PosteriorChain {
            cells,
            chain: Vec::with_capacity(draws),
            theta_draws: Vec::with_capacity(draws),
            global_scale: Vec::with_capacity(draws),
            log_lik: Vec::with_capacity(draws),
            pointwise_ll: Vec::with_capacity(draws),
            diagnostics: Diagnostics::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.theta_draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta_draws.is_empty()
    }

    /// Concatenates chains in order.
    pub fn pool(chains: &[PosteriorChain]) -> Result<PosteriorChain> {
        let first = chains.first().ok_or_else(|| Error::arg("no chains to pool"))?;
        let total = chains.iter().map(|c| c.len()).sum();
        let mut out = PosteriorChain::with_capacity(first.cells, total);
        for c in chains {
            if c.cells != first.cells {
                return Err(Error::DimensionMismatch {
                    expected: first.cells,
                    actual: c.cells,
                });
            }
            out.chain.extend_from_slice(&c.chain);
            out.theta_draws.extend(c.theta_draws.iter().cloned());
            out.global_scale.extend_from_slice(&c.global_scale);
            out.log_lik.extend_from_slice(&c.log_lik);
            out.pointwise_ll.extend(c.pointwise_ll.iter().cloned());
            out.diagnostics.absorb(&c.diagnostics);
        }
        Ok(out)
    }

    /// Draws of one cell.
    pub fn column(&self, cell: usize) -> Vec<f64> {
        self.theta_draws.iter().map(|r| r[cell]).collect()
    }
}

/// Outcome of one elliptical slice update.
#[derive(Debug, Clone, PartialEq)]
pub struct EssStep {
    pub theta: Vec<f64>,
    pub log_lik: f64,
    pub shrinks: usize,
}

/// One elliptical slice update of the field given the scales in `state`.
pub fn ess_update<L, R>(
    theta: &[f64],
    state: &LatentState,
    model: &FieldModel,
    lik: &L,
    rng: &mut R,
) -> Result<EssStep>
where
    L: FieldLikelihood + ?Sized,
    R: Rng + ?Sized,
{
    let current = lik.log_likelihood(theta);
    tempered_ess_update(theta, current, state, model, lik, 1.0, rng)
}

/// Elliptical slice update targeting `prior x likelihood^power`.
/// `current_log_lik` is the untempered log-likelihood at `theta`.
pub fn tempered_ess_update<L, R>(
    theta: &[f64],
    current_log_lik: f64,
    state: &LatentState,
    model: &FieldModel,
    lik: &L,
    power: f64,
    rng: &mut R,
) -> Result<EssStep>
where
    L: FieldLikelihood + ?Sized,
    R: Rng + ?Sized,
{
    if !current_log_lik.is_finite() {
        return Err(Error::Sampler(format!(
            "non-finite log-likelihood {current_log_lik} at the current state"
        )));
    }
    let cells = theta.len();
    // Zero-mean prior draw through the state-space construction.
    let variances = increment_variances(model, &state.lambda2, state.eta2);
    let nu = sample_field(0.0, model.sigma, &variances, model.order, rng);
    let f: Vec<f64> = theta.iter().map(|t| t - model.mu).collect();

    let u: f64 = rng.random();
    let slice = u.ln() + power * current_log_lik;
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut alpha: f64 = rng.random::<f64>() * two_pi;
    let (mut lo, mut hi) = (alpha - two_pi, alpha);
    let mut proposal = vec![0.0; cells];
    for shrinks in 0..=MAX_SHRINKS {
        let (s, c) = alpha.sin_cos();
        for ((p, fi), ni) in proposal.iter_mut().zip(&f).zip(&nu) {
            *p = fi * c + ni * s + model.mu;
        }
        let ll = lik.log_likelihood(&proposal);
        if power * ll > slice {
            return Ok(EssStep {
                theta: proposal,
                log_lik: ll,
                shrinks,
            });
        }
        if alpha < 0.0 {
            lo = alpha;
        } else {
            hi = alpha;
        }
        alpha = lo + rng.random::<f64>() * (hi - lo);
    }
    Err(Error::Sampler(format!(
        "elliptical slice bracket did not accept within {MAX_SHRINKS} shrinks"
    )))
}

/// Gibbs sweep over the scales and auxiliaries given the field `theta`.
pub fn gibbs_update_scales<R: Rng + ?Sized>(
    theta: &[f64],
    state: &mut LatentState,
    model: &FieldModel,
    rng: &mut R,
) {
    let incs = increments(theta, model.order);
    let zeta2 = model.zeta * model.zeta;
    let cells = theta.len() as f64;

    if model.family == Family::Hsmrf {
        for (j, d) in incs.iter().enumerate() {
            let w = increment_weight(model.order, j);
            let rate = 1.0 / state.psi[j] + d * d / (2.0 * w * state.eta2 * zeta2);
            state.lambda2[j] = inverse_gamma(1.0, rate, rng);
        }
    }

    let ss: f64 = incs
        .iter()
        .enumerate()
        .map(|(j, d)| d * d / (increment_weight(model.order, j) * state.lambda2[j]))
        .sum();
    state.eta2 = inverse_gamma(0.5 * cells, 1.0 / state.xi + ss / (2.0 * zeta2), rng);

    if model.family == Family::Hsmrf {
        for (psi, l) in state.psi.iter_mut().zip(&state.lambda2) {
            *psi = inverse_gamma(1.0, 1.0 + 1.0 / l, rng);
        }
    }
    state.xi = inverse_gamma(1.0, 1.0 + 1.0 / state.eta2, rng);
}

/// Runs one chain at likelihood power `power`, starting from `init` (or the
/// default initial state). Returns the retained draws and the final state.
pub fn run_single_chain<L: FieldLikelihood + ?Sized>(
    model: &FieldModel,
    lik: &L,
    cfg: &ChainConfig,
    chain_index: usize,
    power: f64,
    init: Option<LatentState>,
    rng: &mut SimRng,
) -> Result<(PosteriorChain, LatentState)> {
    cfg.validate()?;
    model.validate()?;
    let cells = lik.cell_count();
    let mut state = match init {
        Some(s) => s,
        None => {
            let mut s = LatentState::initial(model, cells);
            if let Some(theta) = lik.initial_field() {
                if theta.len() == cells && theta.iter().all(|t| t.is_finite()) {
                    s.theta = theta;
                    // bring the scales in line with the starting field
                    for _ in 0..INITIAL_SCALE_SWEEPS {
                        let theta = std::mem::take(&mut s.theta);
                        gibbs_update_scales(&theta, &mut s, model, rng);
                        s.theta = theta;
                    }
                }
            }
            s
        }
    };
    if state.cells() != cells {
        return Err(Error::DimensionMismatch {
            expected: cells,
            actual: state.cells(),
        });
    }
    state.validate()?;
    let mut out = PosteriorChain::with_capacity(cells, cfg.n_samples);
    let mut current_ll = lik.log_likelihood(&state.theta);
    out.diagnostics.likelihood_evaluations += 1;
    let mut pointwise = vec![0.0; cells];
    for iter in 0..cfg.iterations() {
        let step = tempered_ess_update(&state.theta, current_ll, &state, model, lik, power, rng)?;
        out.diagnostics.shrinks += step.shrinks as u64;
        out.diagnostics.likelihood_evaluations += step.shrinks as u64 + 1;
        state.theta = step.theta;
        current_ll = step.log_lik;
        let theta = std::mem::take(&mut state.theta);
        gibbs_update_scales(&theta, &mut state, model, rng);
        state.theta = theta;
        out.diagnostics.iterations += 1;

        if iter >= cfg.n_burnin && (iter - cfg.n_burnin + 1).is_multiple_of(cfg.thin) {
            let total = lik.pointwise(&state.theta, &mut pointwise);
            out.chain.push(chain_index);
            out.theta_draws.push(state.theta.clone());
            out.global_scale.push(state.global_scale(model));
            out.log_lik.push(total);
            out.pointwise_ll.push(pointwise.clone());
        }
    }
    Ok((out, state))
}

/// Runs `cfg.n_chains` independent chains in parallel, each on its own
/// stream of `cfg.seed`.
pub fn run_chain<L: FieldLikelihood + ?Sized>(
    model: &FieldModel,
    lik: &L,
    cfg: &ChainConfig,
) -> Result<Vec<PosteriorChain>> {
    cfg.validate()?;
    (0..cfg.n_chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(cfg.seed, &[c as u64]);
            run_single_chain(model, lik, cfg, c, 1.0, None, &mut rng).map(|r| r.0)
        })
        .collect()
}

/// Effective sample size from the autocorrelation sum truncated by Geyer's
/// initial positive sequence.
pub fn mcmc_ess(draws: &[f64]) -> Result<f64> {
    let n = draws.len();
    if n < 10 {
        return Err(Error::arg(format!("ESS needs at least 10 draws, got {n}")));
    }
    let mean = draws.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = draws.iter().map(|x| x - mean).collect();
    let autocov = |lag: usize| -> f64 {
        centered[..n - lag]
            .iter()
            .zip(&centered[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64
    };
    let gamma0 = autocov(0);
    if gamma0 <= 0.0 || gamma0 < 1e-300 {
        return Ok(1.0);
    }
    let mut tau = -1.0;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = (autocov(lag) + autocov(lag + 1)) / gamma0;
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    Ok(n as f64 / tau.max(1.0 / n as f64))
}
