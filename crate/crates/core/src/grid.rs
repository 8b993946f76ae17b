//! Regular grids over backward time and the subinterval partition consumed by
//! the discretized coalescent likelihood.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::genealogy::{EventKind, Genealogy};

/// Relative distance under which an event time counts as sitting on a grid
/// boundary.
const COLLISION_TOLERANCE: f64 = 1e-12;

/// Cell boundaries `0 = x_1 < x_2 < ... < x_{H+1}`. Cell `h` (0-based) is the
/// half-open interval `(x_{h+1}, x_{h+2}]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    boundaries: Vec<f64>,
    /// The final cell was stretched past the regular boundary to collect older
    /// events.
    final_cell_open: bool,
}

impl Grid {
    pub fn from_boundaries(boundaries: Vec<f64>, final_cell_open: bool) -> Result<Self> {
        if boundaries.len() < 2 {
            return Err(Error::InvalidGrid("a grid needs at least one cell".into()));
        }
        if boundaries[0] != 0.0 {
            return Err(Error::InvalidGrid("the first boundary must be 0".into()));
        }
        if boundaries.iter().any(|b| !b.is_finite()) || boundaries.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid("boundaries must be finite and strictly increasing".into()));
        }
        Ok(Grid {
            boundaries,
            final_cell_open,
        })
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn cell_count(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn final_cell_open(&self) -> bool {
        self.final_cell_open
    }

    pub fn end(&self) -> f64 {
        *self.boundaries.last().unwrap()
    }

    pub fn cell_bounds(&self, h: usize) -> (f64, f64) {
        (self.boundaries[h], self.boundaries[h + 1])
    }

    pub fn midpoints(&self) -> Vec<f64> {
        self.boundaries.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Cell containing time `t` under the `(x_h, x_{h+1}]` convention; times
    /// beyond the grid fall in the last cell.
    pub fn cell_of(&self, t: f64) -> usize {
        let h = self.boundaries.partition_point(|&b| b < t);
        h.saturating_sub(1).min(self.cell_count() - 1)
    }
}

/// Number of grid cells for `n` sequences: `floor(min(0.8 (n - 1), 500))`,
/// but at least 2.
pub fn choose_cell_count(n: usize) -> Result<usize> {
    if n < 4 {
        return Err(Error::arg(format!("cell-count rule needs n >= 4, got {n}")));
    }
    // 4 (n - 1) / 5 in integers is exact floor(0.8 (n - 1)).
    Ok((4 * (n - 1) / 5).clamp(2, 500))
}

/// Grid boundary `T` such that `Pr(TMRCA > T) = 1 - alpha_t` under a
/// log-normal TMRCA fitted to a published median and 95% interval.
pub fn choose_boundary(tmrca_median: f64, tmrca_ci: (f64, f64), alpha_t: f64) -> Result<f64> {
    let (lo, hi) = tmrca_ci;
    if !(lo > 0.0 && lo < tmrca_median && tmrca_median < hi && hi.is_finite()) {
        return Err(Error::arg(
            "TMRCA summary must satisfy 0 < lo < median < hi",
        ));
    }
    if !(alpha_t > 0.0 && alpha_t <= 0.5) {
        return Err(Error::arg("alpha_T must lie in (0, 0.5]"));
    }
    let log_mean = tmrca_median.ln();
    let log_sd = (log_mean - lo.ln()) / 1.96;
    let z = Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(alpha_t);
    Ok((log_mean + log_sd * z).exp())
}

/// Regular grid with `cells` cells ending at `boundary`. When `t_max`
/// exceeds `boundary`, the first `cells - 1` cells split `[0, boundary]`
/// evenly and the last cell spans `(boundary, t_max]`.
pub fn build_grid(cells: usize, boundary: f64, t_max: Option<f64>) -> Result<Grid> {
    if cells < 2 {
        return Err(Error::InvalidGrid(format!("need at least 2 cells, got {cells}")));
    }
    if !(boundary > 0.0 && boundary.is_finite()) {
        return Err(Error::InvalidGrid("grid boundary T must be positive".into()));
    }
    if let Some(t) = t_max {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::InvalidGrid("t_max must be positive".into()));
        }
    }
    match t_max {
        Some(t) if t > boundary => {
            let width = boundary / (cells - 1) as f64;
            let mut b: Vec<f64> = (0..cells).map(|i| i as f64 * width).collect();
            b[cells - 1] = boundary;
            b.push(t);
            Grid::from_boundaries(b, true)
        }
        _ => {
            let width = boundary / cells as f64;
            let mut b: Vec<f64> = (0..=cells).map(|i| i as f64 * width).collect();
            b[cells] = boundary;
            Grid::from_boundaries(b, false)
        }
    }
}

/// Fixed-tree default: `cells` equal cells ending at the TMRCA.
pub fn grid_for_genealogy(cells: usize, g: &Genealogy) -> Result<Grid> {
    build_grid(cells, g.tmrca(), None)
}

/// Intersection of one lineage interval with one grid cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Subinterval {
    pub length: f64,
    /// 0-based grid cell.
    pub cell: usize,
    pub coal_factor: f64,
    /// The parent lineage interval ends in a coalescence and this is its final
    /// piece.
    pub coalescent_end: bool,
}

/// Per-cell sufficient statistics of the discretized likelihood.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CellSummary {
    /// `sum C_d Delta_d`
    pub exposure: f64,
    /// `sum z_d`
    pub events: f64,
    /// `sum z_d ln C_d`
    pub log_coal_factor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubintervalPartition {
    subintervals: Vec<Subinterval>,
    grid: Grid,
    sample_size: usize,
    sampling_times: usize,
    /// Interior boundaries moved off an event time.
    shifted_boundaries: Vec<usize>,
}

impl SubintervalPartition {
    pub fn subintervals(&self) -> &[Subinterval] {
        &self.subintervals
    }

    pub fn len(&self) -> usize {
        self.subintervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subintervals.is_empty()
    }

    pub fn cell_count(&self) -> usize {
        self.grid.cell_count()
    }

    /// The grid actually used, after any boundary shifts.
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn sample_size(&self) -> usize {
        self.sample_size
    }

    pub fn sampling_times(&self) -> usize {
        self.sampling_times
    }

    pub fn shifted_boundaries(&self) -> &[usize] {
        &self.shifted_boundaries
    }

    pub fn cell_summaries(&self) -> Vec<CellSummary> {
        let mut cells = vec![CellSummary::default(); self.cell_count()];
        for s in &self.subintervals {
            let c = &mut cells[s.cell];
            c.exposure += s.coal_factor * s.length;
            if s.coalescent_end {
                c.events += 1.0;
                c.log_coal_factor += s.coal_factor.ln();
            }
        }
        cells
    }
}

/// Splits the lineage intervals of `g` at the grid boundaries.
pub fn partition(g: &Genealogy, grid: &Grid) -> Result<SubintervalPartition> {
    let tmrca = g.tmrca();
    if grid.end() < tmrca * (1.0 - COLLISION_TOLERANCE) {
        return Err(Error::InvalidGrid(format!(
            "grid ends at {} but the TMRCA is {}",
            grid.end(),
            tmrca
        )));
    }
    let events: Vec<f64> = g
        .schedule()
        .times()
        .iter()
        .skip(1)
        .chain(g.coal_times())
        .copied()
        .collect();

    let mut boundaries = grid.boundaries().to_vec();
    let cells = grid.cell_count();
    let shift = COLLISION_TOLERANCE * grid.end();
    let mut shifted = Vec::new();
    for (h, b) in boundaries.iter_mut().enumerate().take(cells).skip(1) {
        let mut moved = false;
        while events
            .iter()
            .any(|&e| (e - *b).abs() <= COLLISION_TOLERANCE * e.abs().max(b.abs()))
        {
            *b += shift;
            moved = true;
        }
        if moved {
            shifted.push(h);
        }
    }
    if boundaries.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidGrid(
            "boundary shift broke grid ordering; cells are too narrow".into(),
        ));
    }
    let grid = Grid::from_boundaries(boundaries, grid.final_cell_open())?;
    let b = grid.boundaries();

    let intervals = g.lineage_intervals()?;
    let mut subintervals = Vec::with_capacity(intervals.len() + cells);
    let mut h = 0;
    for iv in intervals.iter() {
        let c = iv.coal_factor();
        let mut start = iv.start;
        while h + 1 < cells && b[h + 1] < iv.end {
            if b[h + 1] > start {
                subintervals.push(Subinterval {
                    length: b[h + 1] - start,
                    cell: h,
                    coal_factor: c,
                    coalescent_end: false,
                });
                start = b[h + 1];
            }
            h += 1;
        }
        subintervals.push(Subinterval {
            length: iv.end - start,
            cell: h,
            coal_factor: c,
            coalescent_end: iv.end_event == EventKind::Coalescent,
        });
    }

    Ok(SubintervalPartition {
        subintervals,
        grid,
        sample_size: g.sample_size(),
        sampling_times: g.schedule().distinct_times(),
        shifted_boundaries: shifted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genealogy::SamplingSchedule;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn cell_count_rule() {
        assert_eq!(choose_cell_count(152).unwrap(), 120);
        assert_eq!(choose_cell_count(627).unwrap(), 500);
        assert_eq!(choose_cell_count(101).unwrap(), 80);
        assert_eq!(choose_cell_count(4).unwrap(), 2);
        assert_eq!(choose_cell_count(6).unwrap(), 4);
        assert!(choose_cell_count(3).is_err());
    }

    #[test]
    fn boundary_rule() {
        let t = choose_boundary(283.0, (246.0, 320.0), 0.001).unwrap();
        assert!((t - 227.0).abs() <= 1.0, "{t}");
        let t = choose_boundary(136.0, (111.0, 164.0), 0.001).unwrap();
        assert!((t - 98.7).abs() <= 0.5, "{t}");
        let e = std::f64::consts::E;
        let t = choose_boundary(e, (e * (-1.96f64 * 0.3).exp(), e * 2.0), 0.5).unwrap();
        assert_relative_eq!(t, e, max_relative = 1e-12);
        assert!(choose_boundary(283.0, (300.0, 320.0), 0.001).is_err());
        assert!(choose_boundary(283.0, (0.0, 320.0), 0.001).is_err());
        assert!(choose_boundary(283.0, (246.0, 320.0), 0.0).is_err());
    }

    #[test]
    fn build_grid_shapes() {
        let g = build_grid(4, 4.0, None).unwrap();
        assert_eq!(g.boundaries(), &[0.0, 1.0, 2.0, 3.0, 4.0]);
        assert!(!g.final_cell_open());

        let g = build_grid(100, 227.0, Some(300.0)).unwrap();
        assert_eq!(g.cell_count(), 100);
        assert!(g.final_cell_open());
        for h in 0..99 {
            let (a, b) = g.cell_bounds(h);
            assert_relative_eq!(b - a, 227.0 / 99.0, max_relative = 1e-12);
        }
        assert_eq!(g.cell_bounds(99), (227.0, 300.0));

        let g = build_grid(100, 8.37, Some(8.37)).unwrap();
        assert!(!g.final_cell_open());
        for h in 0..100 {
            let (a, b) = g.cell_bounds(h);
            assert_relative_eq!(b - a, 0.0837, max_relative = 1e-9);
        }
        assert!(build_grid(1, 1.0, None).is_err());
        assert!(build_grid(3, 0.0, None).is_err());
        assert!(build_grid(3, 1.0, Some(-1.0)).is_err());
    }

    #[test]
    fn cell_lookup_is_right_closed() {
        let g = build_grid(4, 4.0, None).unwrap();
        assert_eq!(g.cell_of(0.5), 0);
        assert_eq!(g.cell_of(1.0), 0);
        assert_eq!(g.cell_of(1.0 + 1e-9), 1);
        assert_eq!(g.cell_of(4.0), 3);
        assert_eq!(g.cell_of(10.0), 3);
    }

    fn shape(p: &SubintervalPartition) -> Vec<(f64, usize, f64, bool)> {
        p.subintervals()
            .iter()
            .map(|s| (s.length, s.cell, s.coal_factor, s.coalescent_end))
            .collect()
    }

    #[test]
    fn partition_examples() {
        let g = Genealogy::new(SamplingSchedule::isochronous(2).unwrap(), vec![1.0]).unwrap();
        let p = partition(&g, &build_grid(2, 1.0, None).unwrap()).unwrap();
        assert_eq!(shape(&p), vec![(0.5, 0, 1.0, false), (0.5, 1, 1.0, true)]);

        let g = Genealogy::new(SamplingSchedule::isochronous(3).unwrap(), vec![1.3, 2.5]).unwrap();
        let p = partition(&g, &grid_for_genealogy(3, &g).unwrap()).unwrap();
        assert_eq!(p.len(), 3 + 1 + 3 - 3);

        let s = SamplingSchedule::new(vec![0.0, 1.0], vec![2, 1]).unwrap();
        let g = Genealogy::new(s, vec![2.0, 3.0]).unwrap();
        let p = partition(&g, &build_grid(2, 3.0, None).unwrap()).unwrap();
        let cz: Vec<(f64, bool)> = p.subintervals().iter().map(|s| (s.coal_factor, s.coalescent_end)).collect();
        assert_eq!(cz, vec![(1.0, false), (3.0, false), (3.0, true), (1.0, true)]);
        assert_eq!(p.len(), 3 + 2 + 2 - 3);
        let lengths: Vec<f64> = p.subintervals().iter().map(|s| s.length).collect();
        assert_eq!(lengths, vec![1.0, 0.5, 0.5, 1.0]);
    }

    #[test]
    fn collisions_shift_boundary() {
        let g = Genealogy::new(SamplingSchedule::isochronous(3).unwrap(), vec![1.0, 2.0]).unwrap();
        let p = partition(&g, &build_grid(2, 2.0, None).unwrap()).unwrap();
        assert_eq!(p.shifted_boundaries(), &[1]);
        assert!(p.grid().boundaries()[1] > 1.0);
        assert_eq!(p.len(), 3 + 1 + 2 - 3);
        assert!(p.subintervals().iter().all(|s| s.length > 0.0));
    }

    #[test]
    fn grid_must_cover_tmrca() {
        let g = Genealogy::new(SamplingSchedule::isochronous(2).unwrap(), vec![1.0]).unwrap();
        assert!(partition(&g, &build_grid(2, 0.5, None).unwrap()).is_err());
        // a grid extending past the TMRCA leaves trailing cells empty
        let p = partition(&g, &build_grid(4, 2.0, None).unwrap()).unwrap();
        assert!(p.subintervals().iter().all(|s| s.cell < 2));
        let summaries = p.cell_summaries();
        assert_eq!(summaries[3], CellSummary::default());
    }

    fn arb_case() -> impl Strategy<Value = (Genealogy, usize)> {
        (2usize..30, 0usize..5, 2usize..25, any::<u64>()).prop_map(|(n0, n_rest, cells, seed)| {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let schedule = crate::simulate::sample_schedule(n0, n_rest, 2.0, &mut rng).unwrap();
            let traj = crate::simulate::Trajectory::Constant(0.7);
            let sim = crate::simulate::simulate_coalescent(&schedule, &traj, &Default::default(), &mut rng).unwrap();
            (sim.genealogy, cells)
        })
    }

    proptest! {
        #[test]
        fn partition_invariants((g, cells) in arb_case()) {
            let p = partition(&g, &grid_for_genealogy(cells, &g).unwrap()).unwrap();
            let n = g.sample_size();
            let m = g.schedule().distinct_times();
            prop_assert_eq!(p.len(), n + m + cells - 3);
            let total: f64 = p.subintervals().iter().map(|s| s.length).sum();
            prop_assert!((total - g.tmrca()).abs() <= 1e-10 * g.tmrca());
            prop_assert_eq!(p.subintervals().iter().filter(|s| s.coalescent_end).count(), n - 1);
            prop_assert!(p.subintervals().iter().all(|s| s.length > 0.0));

            // (C, z) agree with replaying events at each midpoint
            let mut t = 0.0;
            for s in p.subintervals() {
                let mid = t + 0.5 * s.length;
                let sampled: usize = g.schedule().times().iter().zip(g.schedule().counts())
                    .filter(|(&x, _)| x < mid).map(|(_, &c)| c).sum();
                let k = sampled - g.coal_times().iter().filter(|&&c| c < mid).count();
                prop_assert_eq!(s.coal_factor, (k * (k.saturating_sub(1)) / 2) as f64);
                prop_assert_eq!(s.cell, p.grid().cell_of(mid));
                t += s.length;
                let ends_at_coal = g.coal_times().iter().any(|&c| (c - t).abs() <= 1e-9 * c);
                prop_assert_eq!(s.coalescent_end, ends_at_coal);
            }
        }
    }
}
