//! Heterochronous coalescent simulation under a time-varying effective
//! population size by thinning a dominating homogeneous process.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genealogy::{binomial2, Genealogy, SamplingSchedule, Tree, TreeNode};
use crate::grid::Grid;

/// Closed-form simulation scenarios: bottleneck, boom-bust and broken
/// exponential.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Scenario {
    Bottleneck,
    BoomBust,
    BrokenExponential,
}

/// Reference study design for a scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioDefaults {
    pub sample_size: usize,
    pub samples_at_zero: usize,
    /// Later samples are uniform on `[0, horizon]`.
    pub horizon: f64,
    /// Fixed regular boundary of the grid.
    pub boundary: f64,
}

impl Scenario {
    pub fn value(self, t: f64) -> f64 {
        match self {
            Scenario::Bottleneck => {
                if (4.0..=6.0).contains(&t) {
                    0.1
                } else {
                    1.0
                }
            }
            Scenario::BoomBust => {
                0.4 + 0.25 * (((5.5 - t) / 3.0).sin() + 0.75 * (-2.5 * (t - 5.0).powi(2)).exp())
            }
            Scenario::BrokenExponential => {
                if t < 4.5 {
                    (-1.20 + 0.09 * t).exp()
                } else if t < 5.0 {
                    (9.09 - 2.20 * t).exp()
                } else {
                    (-3.57 + 0.33 * t).exp()
                }
            }
        }
    }

    /// A lower bound on the trajectory over `t >= 0`.
    pub fn known_minimum(self) -> f64 {
        match self {
            Scenario::Bottleneck => 0.1,
            // 0.4 + 0.25 (sin + 0.75 exp) >= 0.4 - 0.25
            Scenario::BoomBust => 0.15,
            // attained at t = 5 on the right branch
            Scenario::BrokenExponential => (-3.57f64 + 0.33 * 5.0).exp(),
        }
    }

    pub fn defaults(self) -> ScenarioDefaults {
        match self {
            Scenario::Bottleneck => ScenarioDefaults {
                sample_size: 500,
                samples_at_zero: 50,
                horizon: 8.0,
                boundary: 8.37,
            },
            Scenario::BoomBust => ScenarioDefaults {
                sample_size: 2000,
                samples_at_zero: 50,
                horizon: 11.8,
                boundary: 11.73,
            },
            Scenario::BrokenExponential => ScenarioDefaults {
                sample_size: 1000,
                samples_at_zero: 100,
                horizon: 7.8,
                boundary: 7.86,
            },
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Bottleneck => "BN",
            Scenario::BoomBust => "BB",
            Scenario::BrokenExponential => "BE",
        })
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "BN" => Ok(Scenario::Bottleneck),
            "BB" => Ok(Scenario::BoomBust),
            "BE" => Ok(Scenario::BrokenExponential),
            "NGP" => Err(Error::arg(
                "the NGP scenario is not generated internally; supply a tabulated trajectory",
            )),
            other => Err(Error::arg(format!("unknown scenario '{other}'"))),
        }
    }
}

impl TryFrom<String> for Scenario {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Scenario> for String {
    fn from(s: Scenario) -> String {
        s.to_string()
    }
}

/// Effective population size of a named scenario at time `t`.
pub fn scenario(name: &str, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::arg("time must be non-negative"));
    }
    Ok(name.parse::<Scenario>()?.value(t))
}

/// An effective population size trajectory over backward time.
#[derive(Clone)]
pub enum Trajectory {
    Constant(f64),
    Scenario(Scenario),
    /// Piecewise constant: `values[i]` holds on `[times[i], times[i + 1])`
    /// and the last value continues indefinitely.
    Tabulated { times: Vec<f64>, values: Vec<f64> },
    Function(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for Trajectory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Trajectory::Constant(v) => write!(f, "Constant({v})"),
            Trajectory::Scenario(s) => write!(f, "Scenario({s})"),
            Trajectory::Tabulated { times, .. } => write!(f, "Tabulated({} points)", times.len()),
            Trajectory::Function(_) => f.write_str("Function(..)"),
        }
    }
}

impl Trajectory {
    pub fn tabulated(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::arg("tabulated trajectory needs matching, non-empty columns"));
        }
        if times[0] != 0.0 || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::arg("tabulated times must start at 0 and increase strictly"));
        }
        if values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::arg("tabulated values must be positive"));
        }
        Ok(Trajectory::Tabulated { times, values })
    }

    pub fn function(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Trajectory::Function(Arc::new(f))
    }

    pub fn value(&self, t: f64) -> f64 {
        match self {
            Trajectory::Constant(v) => *v,
            Trajectory::Scenario(s) => s.value(t),
            Trajectory::Tabulated { times, values } => {
                let i = times.partition_point(|&x| x <= t).saturating_sub(1);
                values[i]
            }
            Trajectory::Function(f) => f(t),
        }
    }

    /// Lower bound from a lattice scan of `[0, horizon]` combined with any
    /// known minimum.
    pub fn lower_bound(&self, horizon: f64, lattice_points: usize) -> f64 {
        match self {
            Trajectory::Constant(v) => *v,
            Trajectory::Tabulated { values, .. } => values.iter().copied().fold(f64::INFINITY, f64::min),
            _ => {
                let steps = lattice_points.max(2) - 1;
                let scanned = (0..=steps)
                    .map(|i| self.value(horizon * i as f64 / steps as f64))
                    .fold(f64::INFINITY, f64::min);
                match self {
                    Trajectory::Scenario(s) => scanned.min(s.known_minimum()),
                    _ => scanned,
                }
            }
        }
    }

    /// `ln N_e` at the midpoint of each grid cell.
    pub fn log_on_grid(&self, grid: &Grid) -> Vec<f64> {
        grid.midpoints().iter().map(|&t| self.value(t).ln()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationOptions {
    /// Simulation fails if time passes this point.
    pub horizon_cap: f64,
    pub lattice_points: usize,
    /// Overrides the lattice lower bound.
    pub n_min: Option<f64>,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        SimulationOptions {
            horizon_cap: 1000.0,
            lattice_points: 10_000,
            n_min: None,
        }
    }
}

/// A simulated genealogy together with a random topology and tip dates.
#[derive(Debug, Clone)]
pub struct SimulatedGenealogy {
    pub genealogy: Genealogy,
    pub tree: Tree,
    /// Tip label and backward sampling time.
    pub dates: Vec<(String, f64)>,
}

/// `n_0` samples at time 0 plus `n_rest` uniform on `[0, horizon]`.
pub fn sample_schedule<R: Rng + ?Sized>(
    n_0: usize,
    n_rest: usize,
    horizon: f64,
    rng: &mut R,
) -> Result<SamplingSchedule> {
    if !(n_0 >= 2 || (n_0 >= 1 && n_rest >= 1)) {
        return Err(Error::arg(format!(
            "invalid sample counts: {n_0} at time 0 and {n_rest} later"
        )));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::arg("sampling horizon must be positive"));
    }
    let mut times = vec![0.0; n_0];
    times.extend((0..n_rest).map(|_| rng.random_range(0.0..horizon)));
    SamplingSchedule::from_sample_times(&times)
}

/// Simulates coalescent times and a random topology by thinning.
pub fn simulate_coalescent<R: Rng + ?Sized>(
    schedule: &SamplingSchedule,
    traj: &Trajectory,
    options: &SimulationOptions,
    rng: &mut R,
) -> Result<SimulatedGenealogy> {
    let n_min = options
        .n_min
        .unwrap_or_else(|| traj.lower_bound(options.horizon_cap, options.lattice_points));
    if !(n_min > 0.0 && n_min.is_finite()) {
        return Err(Error::Simulation(format!(
            "trajectory is not bounded below by a positive value (N_min = {n_min})"
        )));
    }

    let n = schedule.sample_size();
    let mut nodes: Vec<TreeNode> = Vec::with_capacity(2 * n - 1);
    let mut ages: Vec<f64> = Vec::with_capacity(2 * n - 1);
    let mut dates = Vec::with_capacity(n);
    let mut add_tips = |time: f64, count: usize, nodes: &mut Vec<TreeNode>, ages: &mut Vec<f64>, active: &mut Vec<usize>| {
        for _ in 0..count {
            let label = format!("s{}", dates.len() + 1);
            dates.push((label.clone(), time));
            nodes.push(TreeNode {
                label: Some(label),
                branch_length: None,
                children: Vec::new(),
            });
            ages.push(time);
            active.push(nodes.len() - 1);
        }
    };

    let mut active: Vec<usize> = Vec::with_capacity(n);
    add_tips(0.0, schedule.counts()[0], &mut nodes, &mut ages, &mut active);
    let mut next_sample = 1;
    let mut t = 0.0;
    let mut coal_times = Vec::with_capacity(n - 1);

    while coal_times.len() < n - 1 {
        let next_time = schedule.times().get(next_sample).copied().unwrap_or(f64::INFINITY);
        let k = active.len();
        let proposal = if k >= 2 {
            let rate = binomial2(k) / n_min;
            t + Exp::new(rate).expect("positive rate").sample(rng)
        } else {
            f64::INFINITY
        };
        if proposal >= next_time {
            t = next_time;
            add_tips(t, schedule.counts()[next_sample], &mut nodes, &mut ages, &mut active);
            next_sample += 1;
            continue;
        }
        if proposal > options.horizon_cap {
            return Err(Error::Simulation(format!(
                "simulation passed the horizon cap {}",
                options.horizon_cap
            )));
        }
        t = proposal;
        let ne = traj.value(t);
        if !(ne >= n_min) {
            return Err(Error::Simulation(format!(
                "N_e({t}) = {ne} is below the dominating bound {n_min}"
            )));
        }
        if rng.random::<f64>() * ne < n_min {
            let a = rng.random_range(0..k);
            let mut b = rng.random_range(0..k - 1);
            if b >= a {
                b += 1;
            }
            let (ca, cb) = (active[a], active[b]);
            nodes.push(TreeNode {
                label: None,
                branch_length: None,
                children: vec![ca, cb],
            });
            ages.push(t);
            let parent = nodes.len() - 1;
            let (hi, lo) = if a > b { (a, b) } else { (b, a) };
            active.swap_remove(hi);
            active.swap_remove(lo);
            active.push(parent);
            coal_times.push(t);
        }
    }

    let root = nodes.len() - 1;
    for p in 0..nodes.len() {
        let children = nodes[p].children.clone();
        for c in children {
            nodes[c].branch_length = Some(ages[p] - ages[c]);
        }
    }
    let genealogy = Genealogy::new(schedule.clone(), coal_times)?;
    Ok(SimulatedGenealogy {
        genealogy,
        tree: Tree::new(nodes, root),
        dates,
    })
}
