//! Piecewise-constant coalescent log-likelihood on a grid.
//!
//! With `N_e(t) = exp(theta_h)` on cell `h`, each subinterval `d` contributes
//! `z_d (ln C_d - theta_h) - C_d Delta_d exp(-theta_h)`.

use crate::error::{Error, Result};
use crate::grid::{CellSummary, SubintervalPartition};

/// Log-likelihood with its per-cell decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct LogLik {
    pub total: f64,
    pub per_cell: Vec<f64>,
}

/// Evaluates the discretized coalescent log-likelihood subinterval by
/// subinterval.
pub fn log_likelihood(part: &SubintervalPartition, theta: &[f64]) -> Result<LogLik> {
    let cells = part.cell_count();
    if theta.len() != cells {
        return Err(Error::DimensionMismatch {
            expected: cells,
            actual: theta.len(),
        });
    }
    let inv_ne: Vec<f64> = theta.iter().map(|t| (-t).exp()).collect();
    let mut per_cell = vec![0.0; cells];
    for s in part.subintervals() {
        let h = s.cell;
        let mut term = -s.coal_factor * s.length * inv_ne[h];
        if s.coalescent_end {
            term += s.coal_factor.ln() - theta[h];
        }
        per_cell[h] += term;
    }
    Ok(LogLik {
        total: per_cell.iter().sum(),
        per_cell,
    })
}

/// A log-likelihood over a latent field with one value per grid cell that
/// decomposes into per-cell terms.
pub trait FieldLikelihood: Sync {
    fn cell_count(&self) -> usize;

    /// Writes per-cell contributions into `out` and returns their sum.
    fn pointwise(&self, theta: &[f64], out: &mut [f64]) -> f64;

    fn log_likelihood(&self, theta: &[f64]) -> f64 {
        let mut scratch = vec![0.0; self.cell_count()];
        self.pointwise(theta, &mut scratch)
    }

    /// A data-driven starting field for samplers, if the likelihood has one.
    fn initial_field(&self) -> Option<Vec<f64>> {
        None
    }
}

/// Minimum number of coalescent events pooled into each local estimate of
/// the starting field.
pub const INITIAL_FIELD_EVENTS: f64 = 10.0;

/// Coalescent likelihood reduced to per-cell sufficient statistics, so each
/// evaluation costs O(H) regardless of the number of subintervals.
#[derive(Debug, Clone)]
pub struct CoalescentLikelihood {
    cells: Vec<CellSummary>,
}

impl CoalescentLikelihood {
    pub fn new(part: &SubintervalPartition) -> Self {
        CoalescentLikelihood {
            cells: part.cell_summaries(),
        }
    }

    pub fn cells(&self) -> &[CellSummary] {
        &self.cells
    }

    pub fn evaluate(&self, theta: &[f64]) -> Result<LogLik> {
        if theta.len() != self.cells.len() {
            return Err(Error::DimensionMismatch {
                expected: self.cells.len(),
                actual: theta.len(),
            });
        }
        let mut per_cell = vec![0.0; theta.len()];
        let total = self.pointwise(theta, &mut per_cell);
        Ok(LogLik { total, per_cell })
    }
}

impl FieldLikelihood for CoalescentLikelihood {
    fn cell_count(&self) -> usize {
        self.cells.len()
    }

    fn pointwise(&self, theta: &[f64], out: &mut [f64]) -> f64 {
        let mut total = 0.0;
        for ((c, &t), o) in self.cells.iter().zip(theta).zip(out.iter_mut()) {
            // Empty cells contribute exactly zero, even for extreme theta.
            *o = if c.exposure == 0.0 && c.events == 0.0 {
                0.0
            } else {
                c.log_coal_factor - c.events * t - c.exposure * (-t).exp()
            };
            total += *o;
        }
        total
    }

    /// `ln(exposure / events)` pooled over the narrowest window of cells
    /// around each cell holding at least `INITIAL_FIELD_EVENTS` events.
    fn initial_field(&self) -> Option<Vec<f64>> {
        let total: f64 = self.cells.iter().map(|c| c.events).sum();
        if total <= 0.0 {
            return None;
        }
        let target = INITIAL_FIELD_EVENTS.min(total);
        let h_max = self.cells.len();
        let field = (0..h_max)
            .map(|h| {
                let mut r = 0;
                loop {
                    let window = &self.cells[h.saturating_sub(r)..(h + r + 1).min(h_max)];
                    let events: f64 = window.iter().map(|c| c.events).sum();
                    let exposure: f64 = window.iter().map(|c| c.exposure).sum();
                    if events >= target && exposure > 0.0 {
                        return (exposure / events).ln();
                    }
                    r += 1;
                }
            })
            .collect();
        Some(field)
    }

    fn log_likelihood(&self, theta: &[f64]) -> f64 {
        self.cells
            .iter()
            .zip(theta)
            .filter(|(c, _)| c.exposure != 0.0 || c.events != 0.0)
            .map(|(c, &t)| c.log_coal_factor - c.events * t - c.exposure * (-t).exp())
            .sum()
    }
}

/// Likelihood that is identically zero; the sampler then targets the prior.
#[derive(Debug, Clone, Copy)]
pub struct FlatLikelihood {
    pub cells: usize,
}

impl FieldLikelihood for FlatLikelihood {
    fn cell_count(&self) -> usize {
        self.cells
    }

    fn pointwise(&self, _theta: &[f64], out: &mut [f64]) -> f64 {
        out.iter_mut().for_each(|o| *o = 0.0);
        0.0
    }

    fn log_likelihood(&self, _theta: &[f64]) -> f64 {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genealogy::{Genealogy, SamplingSchedule};
    use crate::grid::{build_grid, grid_for_genealogy, partition, Grid};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn unit_exponential() {
        let g = Genealogy::new(SamplingSchedule::isochronous(2).unwrap(), vec![1.0]).unwrap();
        let grid = Grid::from_boundaries(vec![0.0, 1.0], false).unwrap();
        let p = partition(&g, &grid).unwrap();
        let ll = log_likelihood(&p, &[0.0]).unwrap();
        assert_eq!(ll.total, -1.0);
    }

    #[test]
    fn kingman_three_tips() {
        let g = Genealogy::new(SamplingSchedule::isochronous(3).unwrap(), vec![1.0, 2.0]).unwrap();
        for cells in [2, 3, 7] {
            let p = partition(&g, &grid_for_genealogy(cells, &g).unwrap()).unwrap();
            let ll = log_likelihood(&p, &vec![0.0; cells]).unwrap();
            assert_relative_eq!(ll.total, 3f64.ln() - 4.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn length_mismatch() {
        let g = Genealogy::new(SamplingSchedule::isochronous(2).unwrap(), vec![1.0]).unwrap();
        let p = partition(&g, &build_grid(2, 1.0, None).unwrap()).unwrap();
        assert!(matches!(
            log_likelihood(&p, &[0.0]),
            Err(Error::DimensionMismatch { expected: 2, actual: 1 })
        ));
        assert!(CoalescentLikelihood::new(&p).evaluate(&[0.0; 3]).is_err());
    }

    #[test]
    fn empty_cells_contribute_zero() {
        let g = Genealogy::new(SamplingSchedule::isochronous(2).unwrap(), vec![1.0]).unwrap();
        let p = partition(&g, &build_grid(4, 2.0, None).unwrap()).unwrap();
        let theta = [0.3, -0.2, -800.0, 50.0];
        let direct = log_likelihood(&p, &theta).unwrap();
        let fast = CoalescentLikelihood::new(&p).evaluate(&theta).unwrap();
        assert_eq!(direct.per_cell[2], 0.0);
        assert_eq!(fast.per_cell[2], 0.0);
        assert_eq!(fast.per_cell[3], 0.0);
    }

    #[test]
    fn initial_field_pools_events() {
        let g = Genealogy::new(SamplingSchedule::isochronous(3).unwrap(), vec![1.0, 2.0]).unwrap();
        let p = partition(&g, &grid_for_genealogy(2, &g).unwrap()).unwrap();
        // two events in total, exposure 3 + 1
        let f = CoalescentLikelihood::new(&p).initial_field().unwrap();
        assert_eq!(f, vec![2f64.ln(); 2]);

        // cells of width 0.4: the events fall in cells 2 and 4
        let p = partition(&g, &grid_for_genealogy(5, &g).unwrap()).unwrap();
        let f = CoalescentLikelihood::new(&p).initial_field().unwrap();
        let want = [2f64.ln(), 2f64.ln(), 2f64.ln(), 0.8f64.ln(), 0.8f64.ln()];
        for (a, b) in f.iter().zip(want) {
            assert_relative_eq!(*a, b, max_relative = 1e-12);
        }
        assert!(FlatLikelihood { cells: 3 }.initial_field().is_none());
    }

    fn arb_partition() -> impl Strategy<Value = (SubintervalPartition, Vec<f64>, f64)> {
        (2usize..40, 0usize..20, 2usize..30, any::<u64>(), -3.0f64..3.0).prop_map(
            |(n0, n_rest, cells, seed, shift)| {
                use rand::{Rng, SeedableRng};
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let schedule = crate::simulate::sample_schedule(n0, n_rest, 1.5, &mut rng).unwrap();
                let traj = crate::simulate::Trajectory::Constant(0.5);
                let sim = crate::simulate::simulate_coalescent(&schedule, &traj, &Default::default(), &mut rng)
                    .unwrap();
                let g = sim.genealogy;
                let p = partition(&g, &grid_for_genealogy(cells, &g).unwrap()).unwrap();
                let theta = (0..cells).map(|_| rng.random_range(-2.0..2.0)).collect();
                (p, theta, shift)
            },
        )
    }

    proptest! {
        #[test]
        fn aggregated_matches_direct((p, theta, _c) in arb_partition()) {
            let direct = log_likelihood(&p, &theta).unwrap();
            let fast = CoalescentLikelihood::new(&p).evaluate(&theta).unwrap();
            let sum: f64 = direct.per_cell.iter().sum();
            prop_assert!((direct.total - sum).abs() <= 1e-10 * sum.abs().max(1.0));
            for (a, b) in direct.per_cell.iter().zip(&fast.per_cell) {
                prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
            }
            let lik = CoalescentLikelihood::new(&p);
            prop_assert!((lik.log_likelihood(&theta) - fast.total).abs() <= 1e-10 * fast.total.abs().max(1.0));
        }

        #[test]
        fn shifting_theta((p, theta, c) in arb_partition()) {
            let base = log_likelihood(&p, &theta).unwrap().total;
            let shifted: Vec<f64> = theta.iter().map(|t| t + c).collect();
            let moved = log_likelihood(&p, &shifted).unwrap().total;
            let n = p.sample_size() as f64;
            let exposure: f64 = p.subintervals().iter()
                .map(|s| s.coal_factor * s.length * (-theta[s.cell]).exp())
                .sum();
            let predicted = base - (n - 1.0) * c + ((-c).exp() - 1.0) * (-exposure);
            prop_assert!((moved - predicted).abs() <= 1e-9 * moved.abs().max(1.0),
                "moved {} predicted {}", moved, predicted);
        }
    }
}
