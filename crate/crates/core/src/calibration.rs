//! Data-driven choice of the global-scale hyperparameter `zeta` and default
//! hyperparameters for `theta_1`.

use nalgebra::linalg::Cholesky;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field_priors::{precision_from_scales, FieldModel};
use crate::genealogy::{EventKind, Genealogy};
use crate::stats::{mean, variance};

/// Default tail probability for the bound on the marginal standard deviation.
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SkylineInterval {
    pub start: f64,
    pub end: f64,
    pub estimate: f64,
}

/// Classic skyline estimates, one per coalescent interval, ordered from the
/// present into the past.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkylineEstimate {
    pub intervals: Vec<SkylineInterval>,
}

impl SkylineEstimate {
    pub fn estimates(&self) -> Vec<f64> {
        self.intervals.iter().map(|i| i.estimate).collect()
    }

    pub fn log_estimates(&self) -> Vec<f64> {
        self.intervals.iter().map(|i| i.estimate.ln()).collect()
    }
}

/// Between consecutive coalescences, the estimate is the coalescent-factor
/// weighted waiting time `sum_i C_i |I_i|`. Without intervening samples this
/// is the classic `(t_k - t_{k+1}) C(n_k, 2)`.
pub fn classic_skyline(g: &Genealogy) -> Result<SkylineEstimate> {
    let mut intervals = Vec::with_capacity(g.sample_size() - 1);
    let mut acc = 0.0;
    let mut start = 0.0;
    for iv in g.lineage_intervals()?.iter() {
        acc += iv.coal_factor() * iv.length();
        if iv.end_event == EventKind::Coalescent {
            intervals.push(SkylineInterval {
                start,
                end: iv.end,
                estimate: acc,
            });
            acc = 0.0;
            start = iv.end;
        }
    }
    Ok(SkylineEstimate { intervals })
}

/// Geometric mean of the marginal standard deviations of the field with unit
/// local and global scales.
pub fn sigma_ref(model: &FieldModel, cells: usize) -> Result<f64> {
    let p = model.order.as_usize();
    if cells < p + 1 {
        return Err(Error::arg(format!(
            "sigma_ref needs at least {} cells for order {p}",
            p + 1
        )));
    }
    // eta^2 zeta^2 = 1
    let unit = FieldModel { zeta: 1.0, ..*model };
    let q = precision_from_scales(&unit, &vec![1.0; cells - 1], 1.0, cells).to_dense();
    let chol = Cholesky::new(q).ok_or_else(|| Error::arg("precision matrix is not positive definite"))?;
    let cov = chol.inverse();
    let mean_log_sd = (0..cells).map(|i| 0.5 * cov[(i, i)].ln()).sum::<f64>() / cells as f64;
    Ok(mean_log_sd.exp())
}

/// `zeta = U / (sigma_ref tan(pi (1 - alpha) / 2))`.
pub fn zeta(upper: f64, sigma_ref: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::arg(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(upper > 0.0 && upper.is_finite()) || !(sigma_ref > 0.0 && sigma_ref.is_finite()) {
        return Err(Error::arg("U and sigma_ref must be positive"));
    }
    let t = (std::f64::consts::FRAC_PI_2 * (1.0 - alpha)).tan();
    Ok(upper / (sigma_ref * t))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Calibration {
    #[serde(rename = "U")]
    pub upper: f64,
    pub sigma_ref: f64,
    pub zeta: f64,
}

/// Sets `U` to the standard deviation of the log skyline estimates and
/// returns the resulting `zeta` at the default `alpha`.
pub fn calibrate(g: &Genealogy, model: &FieldModel, cells: usize) -> Result<Calibration> {
    calibrate_with_alpha(g, model, cells, DEFAULT_ALPHA)
}

pub fn calibrate_with_alpha(g: &Genealogy, model: &FieldModel, cells: usize, alpha: f64) -> Result<Calibration> {
    if g.sample_size() < 3 {
        return Err(Error::arg("calibration needs at least 3 samples"));
    }
    let logs = classic_skyline(g)?.log_estimates();
    let upper = variance(&logs).sqrt();
    if !(upper > 0.0) {
        return Err(Error::DegenerateSkyline);
    }
    let sref = sigma_ref(model, cells)?;
    Ok(Calibration {
        upper,
        sigma_ref: sref,
        zeta: zeta(upper, sref, alpha)?,
    })
}

/// Default `(mu, sigma)` for `theta_1`: the mean of the log skyline estimates
/// and twice their standard deviation.
pub fn default_theta1_prior(g: &Genealogy) -> Result<(f64, f64)> {
    let logs = classic_skyline(g)?.log_estimates();
    let mu = mean(&logs);
    let sigma = if logs.len() >= 2 { 2.0 * variance(&logs).sqrt() } else { 0.0 };
    // A single or constant skyline carries no spread; fall back to unit sd.
    Ok((mu, if sigma > 0.0 { sigma } else { 1.0 }))
}
