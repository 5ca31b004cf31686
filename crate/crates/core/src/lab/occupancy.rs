use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lab::{sample_start, stream_rng};
use crate::region::{certify_covered, Parallelotope, RegionUnion};
use crate::system::{DynamicalSystem, State};

/// Visit counts on a rectangular partition of `S^1 x window`, row-major with
/// the `phi` axis first.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OccupancyGrid {
    pub dims: Vec<usize>,
    /// Fiber window (chart coordinates); empty when read back from a file.
    pub window_lo: Vec<f64>,
    pub window_hi: Vec<f64>,
    #[serde(skip)]
    pub counts: Vec<u64>,
    pub burn_in: u64,
    pub total_steps: u64,
    /// Recorded points outside the window, counted in the nearest edge cell.
    pub clamped: u64,
}

impl OccupancyGrid {
    pub fn new(
        dims: Vec<usize>,
        window_lo: Vec<f64>,
        window_hi: Vec<f64>,
        burn_in: u64,
    ) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::Usage(format!(
                "grid dims must be positive, got {dims:?}"
            )));
        }
        if window_lo.len() + 1 != dims.len() || window_hi.len() != window_lo.len() {
            return Err(Error::Usage(format!(
                "grid needs {} fiber window bounds, got {}",
                dims.len() - 1,
                window_lo.len()
            )));
        }
        if window_lo.iter().zip(&window_hi).any(|(a, b)| !(a < b)) {
            return Err(Error::Usage("empty occupancy window".into()));
        }
        let total = dims.iter().product();
        Ok(Self {
            dims,
            window_lo,
            window_hi,
            counts: vec![0; total],
            burn_in,
            total_steps: 0,
            clamped: 0,
        })
    }

    fn empty_like(&self) -> Self {
        Self {
            counts: vec![0; self.counts.len()],
            total_steps: 0,
            clamped: 0,
            ..self.clone()
        }
    }

    /// Flat index of the cell containing `(phi, x)`, and whether `x` had to be
    /// clamped into the window.
    pub fn cell_of(&self, phi: f64, x: &[f64]) -> (usize, bool) {
        let n_phi = self.dims[0];
        let mut index = ((phi * n_phi as f64) as usize).min(n_phi - 1);
        let mut clamped = false;
        for (axis, &n) in self.dims[1..].iter().enumerate() {
            let (lo, hi) = (self.window_lo[axis], self.window_hi[axis]);
            let pos = (x[axis] - lo) / (hi - lo) * n as f64;
            let cell = if pos < 0.0 {
                clamped = true;
                0
            } else if pos >= n as f64 {
                clamped = true;
                n - 1
            } else {
                pos as usize
            };
            index = index * n + cell;
        }
        (index, clamped)
    }

    pub fn record(&mut self, state: &State) {
        let (index, clamped) = self.cell_of(state.phi, &state.x[..self.dims.len() - 1]);
        self.counts[index] += 1;
        self.total_steps += 1;
        self.clamped += clamped as u64;
    }

    /// Cell-wise sum; both grids must share dims and window.
    pub fn merge(mut self, other: &OccupancyGrid) -> Result<Self> {
        if self.dims != other.dims
            || self.window_lo != other.window_lo
            || self.window_hi != other.window_hi
        {
            return Err(Error::Usage(
                "cannot merge grids with different layouts".into(),
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total_steps += other.total_steps;
        self.clamped += other.clamped;
        Ok(self)
    }

    pub fn count_sum(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Writes the `OGRID1` text format.
    pub fn write_ogrid<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "OGRID1 {}", self.dims.len())?;
        for n in &self.dims {
            write!(w, " {n}")?;
        }
        writeln!(w)?;
        writeln!(w, "{} {}", self.burn_in, self.total_steps)?;
        for c in &self.counts {
            writeln!(w, "{c}")?;
        }
        Ok(())
    }

    /// Parses the `OGRID1` text format. The window is not stored in the file.
    pub fn read_ogrid<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let bad = |line: usize, msg: &str| Error::Config {
            line,
            message: format!("OGRID1: {msg}"),
        };
        let header = lines.next().ok_or_else(|| bad(1, "missing header"))??;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("OGRID1") {
            return Err(bad(1, "bad magic"));
        }
        let rank: usize = fields
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad(1, "bad rank"))?;
        let dims: Vec<usize> = fields
            .map(|v| v.parse().map_err(|_| bad(1, "bad dimension")))
            .collect::<Result<_>>()?;
        if dims.len() != rank || dims.contains(&0) {
            return Err(bad(1, "rank does not match dims"));
        }
        let second = lines.next().ok_or_else(|| bad(2, "missing step line"))??;
        let nums: Vec<u64> = second
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| bad(2, "bad step counts")))
            .collect::<Result<_>>()?;
        if nums.len() != 2 {
            return Err(bad(2, "expected burn_in and total_steps"));
        }
        let total: usize = dims.iter().product();
        let mut counts = Vec::with_capacity(total);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            counts.push(line.trim().parse().map_err(|_| bad(i + 3, "bad count"))?);
        }
        if counts.len() != total {
            return Err(bad(total + 3, "wrong number of counts"));
        }
        Ok(Self {
            dims,
            window_lo: Vec::new(),
            window_hi: Vec::new(),
            counts,
            burn_in: nums[0],
            total_steps: nums[1],
            clamped: 0,
        })
    }
}

/// Ensemble settings of [`occupancy_run`].
#[derive(Clone, Debug, Serialize)]
pub struct OccupancyOptions {
    pub starts: usize,
    pub steps: u64,
    pub burn_in: u64,
    /// `[n_phi, n_x1, ..., n_xd]`.
    pub dims: Vec<usize>,
    pub seed: u64,
    /// Fiber window; the bounding box of `A_check` by default.
    pub window: Option<(Vec<f64>, Vec<f64>)>,
}

/// Runs `starts` orbits from uniform starts in `S^1 x A_hat` and counts the
/// cells visited after `burn_in` steps.
pub fn occupancy_run(system: &DynamicalSystem, opts: &OccupancyOptions) -> Result<OccupancyGrid> {
    let fiber = system.fiber();
    let d = fiber.dim();
    if opts.burn_in > opts.steps {
        return Err(Error::Usage("burn_in exceeds steps".into()));
    }
    let (lo, hi) = opts.window.clone().unwrap_or_else(|| {
        (
            vec![0.5 - fiber.r_check(); d],
            vec![0.5 + fiber.r_check(); d],
        )
    });
    let template = OccupancyGrid::new(opts.dims.clone(), lo, hi, opts.burn_in)?;
    if opts.dims.len() != d + 1 {
        return Err(Error::Usage(format!(
            "grid needs {} dims, got {}",
            d + 1,
            opts.dims.len()
        )));
    }
    let grid = (0..opts.starts)
        .into_par_iter()
        .fold(
            || template.empty_like(),
            |mut grid, i| {
                let mut rng = stream_rng(opts.seed, i as u64);
                let mut state = sample_start(system, &mut rng);
                for step in 0..opts.steps {
                    state = system.step(&state);
                    if step >= opts.burn_in {
                        grid.record(&state);
                    }
                }
                grid
            },
        )
        // Every partial grid is cloned from the template, so layouts agree.
        .reduce(
            || template.empty_like(),
            |a, b| a.merge(&b).expect("same layout"),
        );
    Ok(grid)
}

/// Occupancy of cells whose fiber box lies inside the target region.
#[derive(Clone, Debug, Serialize)]
pub struct InteriorReport {
    pub passed: bool,
    /// Fiber cells certified inside the region with one cell diagonal to spare.
    pub interior_fiber_cells: usize,
    /// Those cells times the `phi` cells.
    pub interior_cells: usize,
    pub empty_cells: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_empty: Option<Vec<usize>>,
    pub min_count: u64,
}

/// A cell is interior when its closed fiber box lies in `region` with margin
/// one cell diagonal (certified by [`certify_covered`]); every `phi` cell
/// over an interior fiber cell must be visited.
pub fn interior_occupancy(grid: &OccupancyGrid, region: &RegionUnion) -> Result<InteriorReport> {
    let fiber_dims = &grid.dims[1..];
    let d = fiber_dims.len();
    if grid.window_lo.len() != d || region.dim() != Some(d) {
        return Err(Error::Usage(
            "grid window and region must match the fiber dimension".into(),
        ));
    }
    let widths: Vec<f64> = (0..d)
        .map(|a| (grid.window_hi[a] - grid.window_lo[a]) / fiber_dims[a] as f64)
        .collect();
    let diagonal = widths.iter().map(|w| w * w).sum::<f64>().sqrt();
    let fiber_total: usize = fiber_dims.iter().product();
    let interior: Vec<usize> = (0..fiber_total)
        .into_par_iter()
        .filter(|&flat| {
            let mut rest = flat;
            let mut center = vec![0.0; d];
            for a in (0..d).rev() {
                let i = rest % fiber_dims[a];
                rest /= fiber_dims[a];
                center[a] = grid.window_lo[a] + (i as f64 + 0.5) * widths[a];
            }
            let half: Vec<f64> = widths.iter().map(|w| 0.5 * w).collect();
            let cell = Parallelotope::axis_box(&center, &half).expect("matching lengths");
            certify_covered(&cell, region, diagonal, 12).covered
        })
        .collect();
    let n_phi = grid.dims[0];
    let mut empty_cells = 0;
    let mut first_empty = None;
    let mut min_count = u64::MAX;
    for &flat in &interior {
        for p in 0..n_phi {
            let c = grid.counts[p * fiber_total + flat];
            min_count = min_count.min(c);
            if c == 0 {
                empty_cells += 1;
                if first_empty.is_none() {
                    let mut idx = vec![p];
                    let mut rest = flat;
                    let mut fiber_idx = vec![0; d];
                    for a in (0..d).rev() {
                        fiber_idx[a] = rest % fiber_dims[a];
                        rest /= fiber_dims[a];
                    }
                    idx.extend(fiber_idx);
                    first_empty = Some(idx);
                }
            }
        }
    }
    Ok(InteriorReport {
        passed: !interior.is_empty() && empty_cells == 0,
        interior_fiber_cells: interior.len(),
        interior_cells: interior.len() * n_phi,
        empty_cells,
        first_empty,
        min_count: if interior.is_empty() { 0 } else { min_count },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fiber::{FiberArc, FiberParams};
    use crate::system::{CircleArcPair, PhaseMap, SkewSystem, SolenoidSystem};
    use std::sync::Arc;

    fn fast(d: usize) -> SkewSystem {
        let r_check = if d == 1 { 0.025 } else { 0.002 };
        let fiber = FiberArc::build(&FiberParams::new(d, 0.9, 0.2, r_check)).unwrap();
        SkewSystem::new(CircleArcPair::standard(3).unwrap(), Arc::new(fiber))
    }

    fn opts(starts: usize, steps: u64, burn_in: u64, dims: Vec<usize>) -> OccupancyOptions {
        OccupancyOptions {
            starts,
            steps,
            burn_in,
            dims,
            seed: 42,
            window: None,
        }
    }

    #[test]
    fn burn_in_only_gives_empty_grid() {
        let sys = DynamicalSystem::Skew(fast(1));
        let grid = occupancy_run(&sys, &opts(4, 100, 100, vec![16, 8])).unwrap();
        assert_eq!(grid.count_sum(), 0);
        assert_eq!(grid.total_steps, 0);
    }

    #[test]
    fn counts_sum_to_recorded_steps() {
        let sys = DynamicalSystem::Skew(fast(1));
        let grid = occupancy_run(&sys, &opts(5, 1000, 100, vec![16, 8])).unwrap();
        assert_eq!(grid.count_sum(), 5 * 900);
        assert_eq!(grid.total_steps, 5 * 900);
    }

    #[test]
    fn merge_equals_batch() {
        let sys = DynamicalSystem::Skew(fast(1));
        let batch = occupancy_run(&sys, &opts(6, 2000, 100, vec![32, 16])).unwrap();
        // Start i of a batch is stream i, so single-start runs must replay it.
        let mut merged: Option<OccupancyGrid> = None;
        for i in 0..6u64 {
            let fiber = sys.fiber();
            let mut grid = OccupancyGrid::new(
                vec![32, 16],
                vec![0.5 - fiber.r_check()],
                vec![0.5 + fiber.r_check()],
                100,
            )
            .unwrap();
            let mut rng = stream_rng(42, i);
            let mut s = sample_start(&sys, &mut rng);
            for step in 0..2000 {
                s = sys.step(&s);
                if step >= 100 {
                    grid.record(&s);
                }
            }
            merged = Some(match merged {
                None => grid,
                Some(m) => m.merge(&grid).unwrap(),
            });
        }
        assert_eq!(merged.unwrap(), batch);
    }

    #[test]
    fn ogrid_round_trip() {
        let sys = DynamicalSystem::Skew(fast(1));
        let grid = occupancy_run(&sys, &opts(2, 500, 10, vec![8, 4])).unwrap();
        let mut buf = Vec::new();
        grid.write_ogrid(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("OGRID1 2 8 4\n10 980\n"));
        let back = OccupancyGrid::read_ogrid(buf.as_slice()).unwrap();
        assert_eq!(back.counts, grid.counts);
        assert_eq!(back.dims, grid.dims);
        assert_eq!((back.burn_in, back.total_steps), (10, 980));
        assert!(OccupancyGrid::read_ogrid("OGRID2 1 3\n0 0\n".as_bytes()).is_err());
        assert!(OccupancyGrid::read_ogrid("OGRID1 1 3\n0 0\n1\n2\n".as_bytes()).is_err());
    }

    #[test]
    fn solenoid_projection_matches_skew() {
        let f = fast(1);
        let skew = DynamicalSystem::Skew(f.clone());
        let sol =
            DynamicalSystem::Solenoid(SolenoidSystem::new(PhaseMap::Skew(f), 2.0, 0.25).unwrap());
        let a = occupancy_run(&skew, &opts(8, 3000, 100, vec![32, 16])).unwrap();
        let b = occupancy_run(&sol, &opts(8, 3000, 100, vec![32, 16])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn interior_cells_are_visited_on_a_small_run() {
        let sys = DynamicalSystem::Skew(fast(1));
        let grid = occupancy_run(&sys, &opts(20, 20_000, 100, vec![32, 32])).unwrap();
        let report = interior_occupancy(&grid, sys.fiber().region()).unwrap();
        assert!(report.interior_fiber_cells > 0);
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn unvisited_interior_cells_fail() {
        let sys = DynamicalSystem::Skew(fast(1));
        let fiber = sys.fiber();
        let grid = OccupancyGrid::new(
            vec![8, 32],
            vec![0.5 - fiber.r_check()],
            vec![0.5 + fiber.r_check()],
            0,
        )
        .unwrap();
        let report = interior_occupancy(&grid, fiber.region()).unwrap();
        assert!(!report.passed);
        assert_eq!(report.empty_cells, report.interior_cells);
        assert_eq!(report.first_empty.as_ref().unwrap()[0], 0);
    }
}
