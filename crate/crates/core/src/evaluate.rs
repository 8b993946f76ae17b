//! Posterior summaries, truth-based performance metrics, WAIC and marginal
//! likelihoods for model comparison.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coalescent::FieldLikelihood;
use crate::error::{Error, Result};
use crate::field_priors::FieldModel;
use crate::rng::stream;
use crate::samplers::{run_single_chain, ChainConfig, PosteriorChain};
use crate::stats::{log_mean_exp, mean, quantile_sorted, variance};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Mean absolute deviation of the posterior median from the truth.
    pub mad: Option<f64>,
    /// Mean width of the 95% credible intervals.
    pub mciw: f64,
    /// Fraction of cells whose true value lies inside the 95% interval.
    pub envelope: Option<f64>,
    /// Mean absolute sequential variation of the posterior median.
    pub masv: f64,
    /// MASV of the truth.
    pub tmasv: Option<f64>,
    pub p_eff: Option<f64>,
    pub waic: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub median: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub metrics: Metrics,
}

/// Mean absolute sequential variation `(1/(H-1)) sum |x_{i+1} - x_i|`.
pub fn masv(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    x.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (x.len() - 1) as f64
}

/// Per-cell posterior medians and 95% intervals plus the performance metrics.
pub fn metrics(chain: &PosteriorChain, truth: Option<&[f64]>) -> Result<FitSummary> {
    if chain.is_empty() {
        return Err(Error::arg("posterior has no draws"));
    }
    let cells = chain.cells;
    if let Some(t) = truth {
        if t.len() != cells {
            return Err(Error::DimensionMismatch {
                expected: cells,
                actual: t.len(),
            });
        }
    }
    let mut median = Vec::with_capacity(cells);
    let mut lower = Vec::with_capacity(cells);
    let mut upper = Vec::with_capacity(cells);
    for h in 0..cells {
        let mut col = chain.column(h);
        col.sort_by(f64::total_cmp);
        median.push(quantile_sorted(&col, 0.5));
        lower.push(quantile_sorted(&col, 0.025));
        upper.push(quantile_sorted(&col, 0.975));
    }
    let hf = cells as f64;
    let mciw = lower.iter().zip(&upper).map(|(l, u)| u - l).sum::<f64>() / hf;
    let (mad, envelope, tmasv) = match truth {
        Some(t) => {
            let mad = median.iter().zip(t).map(|(m, x)| (m - x).abs()).sum::<f64>() / hf;
            let inside = t
                .iter()
                .zip(lower.iter().zip(&upper))
                .filter(|&(x, (l, u))| l <= x && x <= u)
                .count();
            (Some(mad), Some(inside as f64 / hf), Some(masv(t)))
        }
        None => (None, None, None),
    };
    let (p_eff_value, waic_value) = if chain.len() >= 2 {
        (
            Some(p_eff(&chain.log_lik)?),
            Some(waic(&chain.pointwise_ll)?.waic),
        )
    } else {
        (None, None)
    };
    Ok(FitSummary {
        metrics: Metrics {
            mad,
            mciw,
            envelope,
            masv: masv(&median),
            tmasv,
            p_eff: p_eff_value,
            waic: waic_value,
        },
        median,
        lower,
        upper,
    })
}

/// Effective number of parameters `2 var(L_r)` from total log-likelihoods.
pub fn p_eff(log_lik: &[f64]) -> Result<f64> {
    let r = log_lik.len();
    if r < 2 {
        return Err(Error::arg("p_eff needs at least two draws"));
    }
    let m = mean(log_lik);
    let ss: f64 = log_lik.iter().map(|l| (l - m).powi(2)).sum();
    Ok(2.0 * ss / (r - 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waic {
    pub lppd: f64,
    pub p_waic: f64,
    pub waic: f64,
}

/// WAIC from a draws-by-cells matrix of pointwise log-likelihoods.
pub fn waic(pointwise: &[Vec<f64>]) -> Result<Waic> {
    let draws = pointwise.len();
    if draws < 2 {
        return Err(Error::arg("WAIC needs at least two draws"));
    }
    let cells = pointwise[0].len();
    if pointwise.iter().any(|r| r.len() != cells) {
        return Err(Error::arg("ragged pointwise log-likelihood matrix"));
    }
    let mut lppd = 0.0;
    let mut p_waic = 0.0;
    let mut col = vec![0.0; draws];
    for h in 0..cells {
        for (c, row) in col.iter_mut().zip(pointwise) {
            *c = row[h];
        }
        lppd += log_mean_exp(&col);
        p_waic += variance(&col);
    }
    Ok(Waic {
        lppd,
        p_waic,
        waic: -2.0 * (lppd - p_waic),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelWeight {
    pub waic: f64,
    pub delta: f64,
    pub weight: f64,
}

/// Akaike-style weights `exp(-dW/2) / sum exp(-dW/2)` from WAIC values.
pub fn weights_from_waic(values: &[f64]) -> Result<Vec<ModelWeight>> {
    if values.is_empty() {
        return Err(Error::arg("no models to weigh"));
    }
    let best = values.iter().copied().fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = values.iter().map(|w| (-0.5 * (w - best)).exp()).collect();
    let total: f64 = raw.iter().sum();
    Ok(values
        .iter()
        .zip(raw)
        .map(|(&w, r)| ModelWeight {
            waic: w,
            delta: w - best,
            weight: r / total,
        })
        .collect())
}

/// WAIC and weights for several models fitted to the same data.
pub fn waic_weights(models: &[&[Vec<f64>]]) -> Result<Vec<ModelWeight>> {
    let cells = models
        .first()
        .and_then(|m| m.first())
        .map(|r| r.len())
        .ok_or_else(|| Error::arg("no models to weigh"))?;
    let mut values = Vec::with_capacity(models.len());
    for m in models {
        let c = m.first().map(|r| r.len()).unwrap_or(0);
        if c != cells {
            return Err(Error::DimensionMismatch {
                expected: cells,
                actual: c,
            });
        }
        values.push(waic(m)?.waic);
    }
    weights_from_waic(&values)
}

/// Powers `beta_k = (k / K)^(1 / shape)`, `k = 0..=K`: the `k/K` quantiles of
/// a Beta(shape, 1) distribution.
pub fn stone_powers(stones: usize, beta_shape: f64) -> Result<Vec<f64>> {
    if stones < 2 {
        return Err(Error::arg("steppingstone needs at least 2 stones"));
    }
    if !(beta_shape > 0.0 && beta_shape.is_finite()) {
        return Err(Error::arg("beta shape must be positive"));
    }
    Ok((0..=stones)
        .map(|k| (k as f64 / stones as f64).powf(1.0 / beta_shape))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteppingStone {
    pub log_ml: f64,
    pub powers: Vec<f64>,
    /// `ln r_k` for each stone, `k = 1..=K`.
    pub log_ratios: Vec<f64>,
}

/// Steppingstone estimate of the log marginal likelihood.
///
/// Each chain climbs from the prior (`beta_0 = 0`) towards the posterior,
/// warm-starting every rung from the end of the previous one. The burn-in
/// and sample budgets of `cfg` are split equally among the stones.
pub fn steppingstone<L: FieldLikelihood + ?Sized>(
    model: &FieldModel,
    lik: &L,
    cfg: &ChainConfig,
    stones: usize,
    beta_shape: f64,
) -> Result<SteppingStone> {
    cfg.validate()?;
    let powers = stone_powers(stones, beta_shape)?;
    let rung_cfg = ChainConfig {
        n_burnin: cfg.n_burnin / stones,
        n_samples: (cfg.n_samples / stones).max(1),
        ..*cfg
    };
    let per_chain: Vec<Vec<Vec<f64>>> = (0..cfg.n_chains)
        .into_par_iter()
        .map(|c| -> Result<Vec<Vec<f64>>> {
            let mut rng = stream(cfg.seed, &[c as u64, u64::from_le_bytes(*b"stepping")]);
            let mut state = None;
            let mut rungs = Vec::with_capacity(stones);
            for &beta in &powers[..stones] {
                let (draws, last) = run_single_chain(model, lik, &rung_cfg, c, beta, state.take(), &mut rng)?;
                rungs.push(draws.log_lik);
                state = Some(last);
            }
            Ok(rungs)
        })
        .collect::<Result<_>>()?;

    let mut log_ratios = Vec::with_capacity(stones);
    for k in 0..stones {
        let step = powers[k + 1] - powers[k];
        let scaled: Vec<f64> = per_chain
            .iter()
            .flat_map(|rungs| rungs[k].iter().map(|ll| step * ll))
            .collect();
        let r = log_mean_exp(&scaled);
        if !r.is_finite() {
            return Err(Error::Sampler(format!("non-finite steppingstone ratio at stone {}", k + 1)));
        }
        log_ratios.push(r);
    }
    Ok(SteppingStone {
        log_ml: log_ratios.iter().sum(),
        powers,
        log_ratios,
    })
}

/// `ln B_k1 = ln ML_k - ln ML_1` relative to the first model.
pub fn log_bayes_factors(log_ml: &[f64]) -> Result<Vec<f64>> {
    let first = *log_ml.first().ok_or_else(|| Error::arg("no marginal likelihoods"))?;
    Ok(log_ml.iter().map(|l| l - first).collect())
}

/// Posterior model probabilities `a_k B_k1 / sum_r a_r B_r1` where `a_k` are
/// prior odds relative to the first model.
pub fn model_probabilities(log_ml: &[f64], prior_odds: &[f64]) -> Result<Vec<f64>> {
    if log_ml.is_empty() {
        return Err(Error::arg("no marginal likelihoods"));
    }
    if log_ml.len() != prior_odds.len() {
        return Err(Error::DimensionMismatch {
            expected: log_ml.len(),
            actual: prior_odds.len(),
        });
    }
    if prior_odds.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
        return Err(Error::arg("prior odds must be positive"));
    }
    if log_ml.iter().any(|l| l.is_nan()) {
        return Err(Error::arg("NaN marginal likelihood"));
    }
    let logs: Vec<f64> = log_ml.iter().zip(prior_odds).map(|(l, a)| l + a.ln()).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.iter().map(|r| r / total).collect())
}
