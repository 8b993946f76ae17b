//! GMRF and horseshoe Markov random field (HSMRF) priors on the log effective
//! population sizes, in state-space form.
//!
//! Conditional on the squared scales, the field starts at
//! `theta_1 ~ N(mu, sigma^2)` and evolves through independent increments
//! `inc_j ~ N(0, w_j lambda_j^2 eta^2 zeta^2)`, `j = 1..H-1`. For order 1 the
//! increments are first differences. For order 2 the first increment is the
//! first difference with `w_1 = 1/2` and the rest are second differences.
//! Half-Cauchy scales are represented through inverse-gamma auxiliaries:
//! `lambda_j^2 | psi_j ~ IG(1/2, 1/psi_j)`, `psi_j ~ IG(1/2, 1)` and likewise
//! for `eta^2` with `xi`. GMRF models pin every `lambda_j^2` to 1.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{inverse_gamma, normal_log_density, standard_normal, SCALE_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Family {
    Gmrf,
    Hsmrf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Order {
    First,
    Second,
}

impl Order {
    pub fn as_usize(self) -> usize {
        match self {
            Order::First => 1,
            Order::Second => 2,
        }
    }
}

impl TryFrom<u8> for Order {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Order::First),
            2 => Ok(Order::Second),
            _ => Err(format!("order must be 1 or 2, got {v}")),
        }
    }
}

impl From<Order> for u8 {
    fn from(o: Order) -> u8 {
        o.as_usize() as u8
    }
}

/// Model family with its order, written `G1`, `G2`, `H1`, `H2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ModelKind {
    pub family: Family,
    pub order: Order,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind { family: Family::Gmrf, order: Order::First },
        ModelKind { family: Family::Hsmrf, order: Order::First },
        ModelKind { family: Family::Gmrf, order: Order::Second },
        ModelKind { family: Family::Hsmrf, order: Order::Second },
    ];
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self.family {
            Family::Gmrf => 'G',
            Family::Hsmrf => 'H',
        };
        write!(f, "{c}{}", self.order.as_usize())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_uppercase();
        let (family, order) = match s.as_str() {
            "G1" | "GMRF1" | "GMRF-1" => (Family::Gmrf, Order::First),
            "G2" | "GMRF2" | "GMRF-2" => (Family::Gmrf, Order::Second),
            "H1" | "HSMRF1" | "HSMRF-1" => (Family::Hsmrf, Order::First),
            "H2" | "HSMRF2" | "HSMRF-2" => (Family::Hsmrf, Order::Second),
            _ => return Err(Error::arg(format!("unknown model '{s}'; expected G1, G2, H1 or H2"))),
        };
        Ok(ModelKind { family, order })
    }
}

impl TryFrom<String> for ModelKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ModelKind> for String {
    fn from(k: ModelKind) -> String {
        k.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldModel {
    pub family: Family,
    pub order: Order,
    /// Prior mean of `theta_1`.
    pub mu: f64,
    /// Prior standard deviation of `theta_1`.
    pub sigma: f64,
    /// Scale of the half-Cauchy prior on the global scale.
    pub zeta: f64,
}

impl FieldModel {
    pub fn new(kind: ModelKind, mu: f64, sigma: f64, zeta: f64) -> Result<Self> {
        let m = FieldModel {
            family: kind.family,
            order: kind.order,
            mu,
            sigma,
            zeta,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() {
            return Err(Error::arg("mu must be finite"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::arg("sigma must be positive"));
        }
        if !(self.zeta > 0.0 && self.zeta.is_finite()) {
            return Err(Error::arg("zeta must be positive"));
        }
        Ok(())
    }

    pub fn kind(&self) -> ModelKind {
        ModelKind {
            family: self.family,
            order: self.order,
        }
    }
}

/// Field values with the squared scales and auxiliaries they are conditioned on.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub theta: Vec<f64>,
    /// Squared local scales, one per increment (all 1 under GMRF).
    pub lambda2: Vec<f64>,
    /// Squared global scale.
    pub eta2: f64,
    pub psi: Vec<f64>,
    pub xi: f64,
}

impl LatentState {
    /// Constant field at `mu` with unit scales.
    pub fn initial(model: &FieldModel, cells: usize) -> Self {
        let incs = cells.saturating_sub(1);
        LatentState {
            theta: vec![model.mu; cells],
            lambda2: vec![1.0; incs],
            eta2: 1.0,
            psi: vec![1.0; incs],
            xi: 1.0,
        }
    }

    pub fn cells(&self) -> usize {
        self.theta.len()
    }

    pub fn validate(&self) -> Result<()> {
        let incs = self.theta.len().saturating_sub(1);
        if self.lambda2.len() != incs || self.psi.len() != incs {
            return Err(Error::DimensionMismatch {
                expected: incs,
                actual: self.lambda2.len().min(self.psi.len()),
            });
        }
        let positive = |x: &f64| *x > 0.0 && x.is_finite();
        if !(self.lambda2.iter().all(positive)
            && self.psi.iter().all(positive)
            && positive(&self.eta2)
            && positive(&self.xi))
        {
            return Err(Error::arg("scales and auxiliaries must be positive and finite"));
        }
        Ok(())
    }

    /// Global scale `gamma = eta zeta`.
    pub fn global_scale(&self, model: &FieldModel) -> f64 {
        self.eta2.sqrt() * model.zeta
    }
}

/// Pure order-`p` differences (`p` in 1..=2), length `H - p`. The order-2
/// entry `l` is `theta_{l+2} - 2 theta_{l+1} + theta_l`.
pub fn difference(theta: &[f64], p: usize) -> Result<Vec<f64>> {
    if !(1..=2).contains(&p) {
        return Err(Error::arg(format!("difference order must be 1 or 2, got {p}")));
    }
    if theta.len() <= p {
        return Err(Error::arg(format!(
            "need more than {p} values for an order-{p} difference, got {}",
            theta.len()
        )));
    }
    Ok(match p {
        1 => theta.windows(2).map(|w| w[1] - w[0]).collect(),
        _ => theta.windows(3).map(|w| w[2] - 2.0 * w[1] + w[0]).collect(),
    })
}

/// State-space increments, length `H - 1`.
pub fn increments(theta: &[f64], order: Order) -> Vec<f64> {
    let h = theta.len();
    let mut out = Vec::with_capacity(h.saturating_sub(1));
    for j in 1..h {
        let v = match order {
            Order::First => theta[j] - theta[j - 1],
            Order::Second if j == 1 => theta[1] - theta[0],
            Order::Second => theta[j] - 2.0 * theta[j - 1] + theta[j - 2],
        };
        out.push(v);
    }
    out
}

/// Inverse of [`increments`]: rebuilds the field from `theta_1` and the
/// increments.
pub fn reconstruct(theta1: f64, incs: &[f64], order: Order) -> Vec<f64> {
    let mut theta = Vec::with_capacity(incs.len() + 1);
    theta.push(theta1);
    for (j, &d) in incs.iter().enumerate() {
        let i = j + 1;
        let next = match order {
            Order::First => theta[i - 1] + d,
            Order::Second if i == 1 => theta[0] + d,
            Order::Second => d + 2.0 * theta[i - 1] - theta[i - 2],
        };
        theta.push(next);
    }
    theta
}

/// Variance multiplier of increment `j` (0-based): 1/2 for the leading
/// first difference of an order-2 field.
pub fn increment_weight(order: Order, j: usize) -> f64 {
    if order == Order::Second && j == 0 {
        0.5
    } else {
        1.0
    }
}

/// Conditional variances `w_j lambda_j^2 eta^2 zeta^2` of the increments.
pub fn increment_variances(model: &FieldModel, lambda2: &[f64], eta2: f64) -> Vec<f64> {
    let global = eta2 * model.zeta * model.zeta;
    lambda2
        .iter()
        .enumerate()
        .map(|(j, l)| increment_weight(model.order, j) * l * global)
        .collect()
}

/// Draws a field with the given `theta_1` mean and standard deviation and
/// increment variances, by cumulative reconstruction.
pub fn sample_field<R: Rng + ?Sized>(
    mean: f64,
    sd: f64,
    variances: &[f64],
    order: Order,
    rng: &mut R,
) -> Vec<f64> {
    let theta1 = mean + sd * standard_normal(rng);
    let incs: Vec<f64> = variances
        .iter()
        .map(|v| v.sqrt() * standard_normal(rng))
        .collect();
    reconstruct(theta1, &incs, order)
}

/// Draws the scales, auxiliaries and field from the full generative prior.
pub fn sample_prior<R: Rng + ?Sized>(model: &FieldModel, cells: usize, rng: &mut R) -> Result<LatentState> {
    if cells < model.order.as_usize() + 1 {
        return Err(Error::arg(format!(
            "an order-{} field needs at least {} cells",
            model.order.as_usize(),
            model.order.as_usize() + 1
        )));
    }
    let incs = cells - 1;
    let xi = inverse_gamma(0.5, 1.0, rng);
    let eta2 = inverse_gamma(0.5, 1.0 / xi, rng);
    let (psi, lambda2) = match model.family {
        Family::Hsmrf => {
            let psi: Vec<f64> = (0..incs).map(|_| inverse_gamma(0.5, 1.0, rng)).collect();
            let lambda2 = psi.iter().map(|p| inverse_gamma(0.5, 1.0 / p, rng)).collect();
            (psi, lambda2)
        }
        Family::Gmrf => (vec![1.0; incs], vec![1.0; incs]),
    };
    let variances = increment_variances(model, &lambda2, eta2);
    let theta = sample_field(model.mu, model.sigma, &variances, model.order, rng);
    Ok(LatentState {
        theta,
        lambda2,
        eta2: eta2.max(SCALE_FLOOR),
        psi,
        xi,
    })
}

/// `log p(theta | scales)` in factorized state-space form.
pub fn log_prior_theta(theta: &[f64], state: &LatentState, model: &FieldModel) -> Result<f64> {
    let incs = theta.len().saturating_sub(1);
    if state.lambda2.len() != incs {
        return Err(Error::DimensionMismatch {
            expected: incs,
            actual: state.lambda2.len(),
        });
    }
    if !(state.eta2 > 0.0) || state.lambda2.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::arg("scales must be positive"));
    }
    if theta.is_empty() {
        return Err(Error::arg("empty field"));
    }
    let variances = increment_variances(model, &state.lambda2, state.eta2);
    let mut lp = normal_log_density(theta[0], model.mu, model.sigma * model.sigma);
    for (d, v) in increments(theta, model.order).iter().zip(&variances) {
        lp += normal_log_density(*d, 0.0, *v);
    }
    Ok(lp)
}

/// Symmetric band matrix stored by diagonals: `diagonals[k][i]` is entry
/// `(i + k, i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymBandMatrix {
    size: usize,
    diagonals: Vec<Vec<f64>>,
}

impl SymBandMatrix {
    pub fn zeros(size: usize, bandwidth: usize) -> Self {
        let diagonals = (0..=bandwidth)
            .map(|k| vec![0.0; size.saturating_sub(k)])
            .collect();
        SymBandMatrix { size, diagonals }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn bandwidth(&self) -> usize {
        self.diagonals.len() - 1
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        let k = hi - lo;
        if k > self.bandwidth() {
            0.0
        } else {
            self.diagonals[k][lo]
        }
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        self.diagonals[hi - lo][lo] += v;
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.size, self.size, |i, j| self.get(i, j))
    }
}

/// Conditional precision `Q = D' V^{-1} D + e_1 e_1' / sigma^2` of the field.
pub fn precision_matrix(model: &FieldModel, state: &LatentState) -> SymBandMatrix {
    precision_from_scales(model, &state.lambda2, state.eta2, state.cells())
}

pub(crate) fn precision_from_scales(
    model: &FieldModel,
    lambda2: &[f64],
    eta2: f64,
    cells: usize,
) -> SymBandMatrix {
    let p = model.order.as_usize();
    let mut q = SymBandMatrix::zeros(cells, p.min(cells.saturating_sub(1)));
    q.add(0, 0, 1.0 / (model.sigma * model.sigma));
    let variances = increment_variances(model, lambda2, eta2);
    for (j, v) in variances.iter().enumerate() {
        let i = j + 1;
        // nonzero coefficients of row j of D
        let row: Vec<(usize, f64)> = match model.order {
            Order::First => vec![(i - 1, -1.0), (i, 1.0)],
            Order::Second if i == 1 => vec![(0, -1.0), (1, 1.0)],
            Order::Second => vec![(i - 2, 1.0), (i - 1, -2.0), (i, 1.0)],
        };
        for &(a, ca) in &row {
            for &(b, cb) in &row {
                if a >= b {
                    q.add(a, b, ca * cb / v);
                }
            }
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(kind: &str, sigma: f64, zeta: f64) -> FieldModel {
        FieldModel::new(kind.parse().unwrap(), 0.0, sigma, zeta).unwrap()
    }

    #[test]
    fn difference_examples() {
        assert_eq!(difference(&[1.0, 2.0, 3.0, 4.0], 2).unwrap(), vec![0.0, 0.0]);
        assert_eq!(difference(&[0.0, 1.0, 0.0], 1).unwrap(), vec![1.0, -1.0]);
        assert_eq!(difference(&[0.0, 1.0, 4.0, 9.0], 2).unwrap(), vec![2.0, 2.0]);
        assert!(difference(&[0.0, 1.0], 2).is_err());
        assert!(difference(&[0.0], 1).is_err());
    }

    #[test]
    fn model_names() {
        for kind in ModelKind::ALL {
            assert_eq!(kind.to_string().parse::<ModelKind>().unwrap(), kind);
        }
        assert!("H3".parse::<ModelKind>().is_err());
        assert!(FieldModel::new("H1".parse().unwrap(), 0.0, 0.0, 1.0).is_err());
        assert!(FieldModel::new("H1".parse().unwrap(), 0.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn log_prior_examples() {
        let m = model("G1", 1.0, 1.0);
        let s = LatentState::initial(&FieldModel { mu: 0.3, ..m }, 1);
        let lp = log_prior_theta(&[1.2], &s, &FieldModel { mu: 0.3, sigma: 2.0, ..m }).unwrap();
        assert_relative_eq!(lp, normal_log_density(1.2, 0.3, 4.0));

        let s = LatentState::initial(&m, 2);
        let lp = log_prior_theta(&[0.0, 0.0], &s, &m).unwrap();
        assert_relative_eq!(lp, -(2.0 * std::f64::consts::PI).ln(), max_relative = 1e-14);

        let bad = LatentState { eta2: 0.0, ..s.clone() };
        assert!(log_prior_theta(&[0.0, 0.0], &bad, &m).is_err());
    }

    #[test]
    fn precision_two_by_two() {
        let m = model("G1", 1.0, 1.0);
        let q = precision_matrix(&m, &LatentState::initial(&m, 2));
        assert_eq!(q.to_dense(), DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 1.0]));
    }

    fn random_state(m: &FieldModel, cells: usize, seed: u64) -> LatentState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = sample_prior(m, cells, &mut rng).unwrap();
        // keep the dense oracle well conditioned
        s.lambda2.iter_mut().for_each(|l| *l = l.clamp(0.05, 20.0));
        s.eta2 = s.eta2.clamp(0.05, 20.0);
        s
    }

    proptest! {
        #[test]
        fn state_space_matches_dense_normal(kind in 0usize..4, cells in 3usize..9, seed: u64) {
            let kind = ModelKind::ALL[kind];
            let m = FieldModel::new(kind, 0.4, 1.3, 0.7).unwrap();
            let s = random_state(&m, cells, seed);
            let q = precision_matrix(&m, &s).to_dense();
            // dense multivariate normal with precision Q
            let chol = q.clone().cholesky().expect("Q is positive definite");
            let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            let d = nalgebra::DVector::from_iterator(cells, s.theta.iter().map(|t| t - m.mu));
            let quad = (d.transpose() * &q * &d)[(0, 0)];
            let dense = 0.5 * log_det - 0.5 * cells as f64 * (2.0 * std::f64::consts::PI).ln() - 0.5 * quad;
            let ss = log_prior_theta(&s.theta, &s, &m).unwrap();
            prop_assert!((dense - ss).abs() <= 1e-8 * dense.abs().max(1.0), "dense {} state-space {}", dense, ss);
            prop_assert!((q.clone() - q.transpose()).abs().max() == 0.0);
            prop_assert!(precision_matrix(&m, &s).bandwidth() == m.order.as_usize());
        }

        #[test]
        fn increments_round_trip(theta in prop::collection::vec(-5.0f64..5.0, 1..20), second: bool) {
            let order = if second { Order::Second } else { Order::First };
            let back = reconstruct(theta[0], &increments(&theta, order), order);
            for (a, b) in theta.iter().zip(&back) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn gmrf_is_hsmrf_with_unit_locals(cells in 3usize..12, seed: u64, second: bool) {
            let order = if second { 2 } else { 1 };
            let g = model(&format!("G{order}"), 1.1, 0.6);
            let h = model(&format!("H{order}"), 1.1, 0.6);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut s = sample_prior(&h, cells, &mut rng).unwrap();
            s.lambda2.iter_mut().for_each(|l| *l = 1.0);
            let a = log_prior_theta(&s.theta, &s, &g).unwrap();
            let b = log_prior_theta(&s.theta, &s, &h).unwrap();
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn degenerate_scales_give_polynomial_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = vec![0.0; 9];
        let t = sample_field(1.0, 0.0, &v, Order::First, &mut rng);
        assert!(t.iter().all(|x| *x == 1.0));
        let mut v2 = vec![0.0; 9];
        v2[0] = 1.0;
        let t = sample_field(1.0, 0.0, &v2, Order::Second, &mut rng);
        let slope = t[1] - t[0];
        for (i, x) in t.iter().enumerate() {
            assert_relative_eq!(*x, 1.0 + slope * i as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn unit_increment_moment() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let m = model("H1", 1.0, 1.0);
        let v = increment_variances(&m, &[1.0], 1.0);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| {
                let t = sample_field(0.0, 1.0, &v, Order::First, &mut rng);
                t[1] - t[0]
            })
            .collect();
        let sd = crate::stats::variance(&draws).sqrt();
        assert!((sd - 1.0).abs() < 0.01, "{sd}");
    }

    #[test]
    fn local_scale_is_half_cauchy() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = model("H1", 1.0, 1.0);
        let mut lambdas = Vec::new();
        for _ in 0..20_000 {
            let s = sample_prior(&m, 6, &mut rng).unwrap();
            lambdas.extend(s.lambda2.iter().map(|l| l.sqrt()));
        }
        // half-Cauchy(0, 1): median 1, quartiles tan(pi/8), tan(3 pi/8)
        let med = crate::stats::quantile(&lambdas, 0.5);
        let q1 = crate::stats::quantile(&lambdas, 0.25);
        let q3 = crate::stats::quantile(&lambdas, 0.75);
        assert!((med - 1.0).abs() < 0.02, "median {med}");
        assert!((q1 - (std::f64::consts::PI / 8.0).tan()).abs() < 0.01, "q1 {q1}");
        assert!((q3 - (3.0 * std::f64::consts::PI / 8.0).tan()).abs() < 0.05, "q3 {q3}");
    }

    #[test]
    fn empirical_covariance_matches_inverse_precision() {
        let m = FieldModel::new("H2".parse().unwrap(), 0.5, 1.5, 0.8).unwrap();
        let cells = 5;
        let mut state = LatentState::initial(&m, cells);
        state.lambda2 = vec![0.5, 2.0, 1.0, 0.3];
        state.eta2 = 1.7;
        let cov = precision_matrix(&m, &state).to_dense().try_inverse().unwrap();
        let v = increment_variances(&m, &state.lambda2, state.eta2);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let n = 100_000;
        let draws: Vec<Vec<f64>> = (0..n)
            .map(|_| sample_field(m.mu, m.sigma, &v, m.order, &mut rng))
            .collect();
        for i in 0..cells {
            for j in 0..=i {
                let prods: Vec<f64> = draws
                    .iter()
                    .map(|d| (d[i] - m.mu) * (d[j] - m.mu))
                    .collect();
                let est = crate::stats::mean(&prods);
                let se = (crate::stats::variance(&prods) / n as f64).sqrt();
                assert!(
                    (est - cov[(i, j)]).abs() < 3.0 * se,
                    "({i},{j}): {est} vs {} (se {se})",
                    cov[(i, j)]
                );
            }
        }
    }
}
