use std::io::Write;

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::fiber::{torus_delta, wrap_unit, MAX_FIBER_DIM};
use crate::lab::{lambda_eff, stream_rng};
use crate::system::{preimage_branch, SkewSystem};

/// Largest depth enumerated word by word; deeper runs sample words.
pub const FULL_ENUMERATION_DEPTH: u32 = 22;
/// Words are 64-bit masks.
pub const MAX_DEPTH: u32 = 64;
/// Number of random words in sampling mode.
pub const SAMPLED_WORDS: usize = 1_000_000;
/// Target size of the reference grid on `A`.
pub const REFERENCE_GRID_TARGET: usize = 4096;

/// Backward-word images of a seed point, and how densely they cover `A`.
#[derive(Clone, Debug, Serialize)]
pub struct DensityReport {
    pub phi: f64,
    pub depth: u32,
    pub passed: bool,
    /// Max over the reference grid of the distance to the nearest point.
    pub covering_radius: f64,
    /// `lambda_eff^(n-1) |A| + lambda_eff^n diam(A_hat)`.
    pub bound: f64,
    pub lambda_eff: f64,
    pub diameter_a: f64,
    pub diameter_a_hat: f64,
    /// False when the words were sampled instead of enumerated.
    pub enumerated: bool,
    pub reference_points: usize,
    /// Spacing of the reference grid (per axis, chart units).
    pub grid_spacing: f64,
    /// Word `w` (bit `j` = branch of step `j + 1`) maps to
    /// `points[w * d..(w + 1) * d]`, chart coordinates.
    #[serde(skip)]
    pub points: Vec<f64>,
    #[serde(skip)]
    pub dim: usize,
}

impl DensityReport {
    pub fn word_count(&self) -> usize {
        self.points.len() / self.dim.max(1)
    }
}

/// Rows `phi,word,x1,...,xd` for every report.
pub fn write_density_csv<W: Write>(reports: &[DensityReport], mut w: W) -> Result<()> {
    let d = reports.first().map_or(0, |r| r.dim);
    write!(w, "phi,word")?;
    for i in 0..d {
        write!(w, ",x{}", i + 1)?;
    }
    writeln!(w)?;
    for r in reports {
        for (word, p) in r.points.chunks(r.dim).enumerate() {
            write!(w, "{},{word}", r.phi)?;
            for v in p {
                write!(w, ",{v:.17e}")?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

/// Pushes `seed` through `f_{phi_1} o ... o f_{phi_n}` for backward base
/// chains `phi -> phi_1 -> ... -> phi_n` whose `j`-th step is the preimage in
/// arc `L_{w_j}`, for every word `w` in `{0,1}^n` (or `SAMPLED_WORDS` random
/// words when `n > FULL_ENUMERATION_DEPTH`), then measures the covering
/// radius of the endpoints over a reference grid of `A`.
pub fn density_certificate(
    system: &SkewSystem,
    phi: f64,
    depth: u32,
    seed_point: &[f64],
    sample_seed: u64,
) -> Result<DensityReport> {
    let fiber = system.fiber();
    let d = fiber.dim();
    check_dim(d, seed_point.len())?;
    let region = fiber.region();
    if !region.contains(&DVector::from_column_slice(seed_point)) {
        return Err(Error::Domain("density seed must lie in A".into()));
    }
    if depth == 0 || depth > MAX_DEPTH {
        return Err(Error::Domain(format!(
            "density depth must be in 1..={MAX_DEPTH}"
        )));
    }
    let enumerated = depth <= FULL_ENUMERATION_DEPTH;
    let words: Vec<u64> = if enumerated {
        (0..1u64 << depth).collect()
    } else {
        let mut rng = stream_rng(sample_seed, 0);
        (0..SAMPLED_WORDS).map(|_| rng.gen::<u64>()).collect()
    };
    let arcs = system.arcs();
    let mut points = vec![0.0; words.len() * d];
    points
        .par_chunks_mut(d)
        .zip(&words)
        .for_each(|(out, &word)| {
            let mut chain = [0.0; MAX_DEPTH as usize];
            let mut current = phi;
            for (j, slot) in chain.iter_mut().take(depth as usize).enumerate() {
                current = preimage_branch(arcs, current, ((word >> j) & 1) as usize);
                *slot = current;
            }
            let mut x = [0.0; MAX_FIBER_DIM];
            let mut y = [0.0; MAX_FIBER_DIM];
            x[..d].copy_from_slice(seed_point);
            for &phase in chain[..depth as usize].iter().rev() {
                system.fiber_map(phase, &x[..d], &mut y[..d]);
                x = y;
            }
            out.copy_from_slice(&x[..d]);
        });

    let (reference, spacing) = reference_grid(region, d)?;
    let index = NearestIndex::new(&points, d);
    let covering_radius = reference
        .par_chunks(d)
        .map(|q| index.nearest_distance(q))
        .reduce(|| 0.0, f64::max);

    let lambda = lambda_eff(fiber);
    let diameter_a = region.diameter()?;
    let diameter_a_hat = 2.0 * fiber.r_hat();
    let bound =
        lambda.powi(depth as i32 - 1) * diameter_a + lambda.powi(depth as i32) * diameter_a_hat;
    Ok(DensityReport {
        phi,
        depth,
        passed: covering_radius <= bound,
        covering_radius,
        bound,
        lambda_eff: lambda,
        diameter_a,
        diameter_a_hat,
        enumerated,
        reference_points: reference.len() / d,
        grid_spacing: spacing,
        points,
        dim: d,
    })
}

/// Cell centres of a regular grid over the bounding box of `A` that lie in `A`.
fn reference_grid(region: &crate::region::RegionUnion, d: usize) -> Result<(Vec<f64>, f64)> {
    let bbox = region
        .bounding_box()
        .ok_or_else(|| Error::Domain("empty region".into()))?;
    let per_axis = (REFERENCE_GRID_TARGET as f64).powf(1.0 / d as f64).ceil() as usize;
    let spacing = (0..d)
        .map(|a| (bbox.hi[a] - bbox.lo[a]) / per_axis as f64)
        .fold(0.0, f64::max);
    let total = per_axis.pow(d as u32);
    let mut out = Vec::new();
    let mut q = DVector::zeros(d);
    for flat in 0..total {
        let mut rest = flat;
        for a in 0..d {
            let i = rest % per_axis;
            rest /= per_axis;
            q[a] = bbox.lo[a] + (i as f64 + 0.5) * (bbox.hi[a] - bbox.lo[a]) / per_axis as f64;
        }
        if region.contains(&q) {
            out.extend(q.iter().map(|&v| wrap_unit(v)));
        }
    }
    if out.is_empty() {
        return Err(Error::Internal("reference grid missed A".into()));
    }
    Ok((out, spacing))
}

/// Points sorted by their first chart offset from `p`; a query scans outward
/// from its insertion position until the first-axis gap exceeds the best
/// distance found.
struct NearestIndex {
    d: usize,
    sorted: Vec<f64>,
}

impl NearestIndex {
    fn new(points: &[f64], d: usize) -> Self {
        let mut rows: Vec<[f64; MAX_FIBER_DIM]> = points
            .chunks(d)
            .map(|p| {
                let mut r = [0.0; MAX_FIBER_DIM];
                for i in 0..d {
                    r[i] = torus_delta(p[i], 0.5);
                }
                r
            })
            .collect();
        rows.sort_by(|a, b| a[0].total_cmp(&b[0]));
        let sorted = rows.iter().flat_map(|r| r[..d].to_vec()).collect();
        Self { d, sorted }
    }

    fn nearest_distance(&self, query: &[f64]) -> f64 {
        let d = self.d;
        let q: Vec<f64> = query.iter().map(|&v| torus_delta(v, 0.5)).collect();
        let n = self.sorted.len() / d;
        let pos = {
            let (mut lo, mut hi) = (0, n);
            while lo < hi {
                let mid = (lo + hi) / 2;
                if self.sorted[mid * d] < q[0] {
                    lo = mid + 1;
                } else {
                    hi = mid;
                }
            }
            lo
        };
        let dist2 = |i: usize| -> f64 {
            (0..d)
                .map(|a| (self.sorted[i * d + a] - q[a]).powi(2))
                .sum()
        };
        let mut best = f64::INFINITY;
        let mut i = pos;
        while i < n {
            let gap = self.sorted[i * d] - q[0];
            if gap * gap > best {
                break;
            }
            best = best.min(dist2(i));
            i += 1;
        }
        let mut i = pos;
        while i > 0 {
            i -= 1;
            let gap = q[0] - self.sorted[i * d];
            if gap * gap > best {
                break;
            }
            best = best.min(dist2(i));
        }
        best.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fiber::{FiberArc, FiberParams};
    use crate::system::CircleArcPair;
    use std::sync::Arc;

    fn fast(d: usize) -> SkewSystem {
        let r_check = if d == 1 { 0.025 } else { 0.002 };
        let fiber = FiberArc::build(&FiberParams::new(d, 0.9, 0.2, r_check)).unwrap();
        SkewSystem::new(CircleArcPair::standard(3).unwrap(), Arc::new(fiber))
    }

    fn seed(sys: &SkewSystem) -> Vec<f64> {
        sys.fiber().region().pieces()[0]
            .center()
            .iter()
            .copied()
            .collect()
    }

    #[test]
    fn nearest_index_matches_brute_force() {
        let mut rng = stream_rng(3, 0);
        let pts: Vec<f64> = (0..600).map(|_| rng.gen_range(0.4..0.6)).collect();
        let index = NearestIndex::new(&pts, 2);
        for _ in 0..200 {
            let q = [rng.gen_range(0.4..0.6), rng.gen_range(0.4..0.6)];
            let brute = pts
                .chunks(2)
                .map(|p| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!((index.nearest_distance(&q) - brute).abs() < 1e-15);
        }
    }

    #[test]
    fn depth_one_is_within_diameter() {
        let sys = fast(1);
        let s = seed(&sys);
        let report = density_certificate(&sys, 0.37, 1, &s, 0).unwrap();
        assert_eq!(report.word_count(), 2);
        assert!(report.covering_radius <= report.diameter_a);
        assert!(report.passed);
    }

    #[test]
    fn endpoints_are_affine_root_images() {
        // On the arcs the fiber maps are E_0 and E_1; check word 0b01 at depth 2.
        let sys = fast(1);
        let s = seed(&sys);
        let report = density_certificate(&sys, 0.0, 2, &s, 0).unwrap();
        let e0 = sys.fiber().root_chart(0);
        let e1 = sys.fiber().root_chart(1);
        // word 1: step 1 in L_1, step 2 in L_0, so p = E_1(E_0(seed)).
        let expected = e1
            .apply(&e0.apply(&DVector::from_vec(s.clone())).unwrap())
            .unwrap();
        assert!((report.points[1] - expected[0]).abs() < 1e-14);
    }

    #[test]
    fn seed_outside_a_is_rejected() {
        let sys = fast(1);
        assert!(density_certificate(&sys, 0.0, 4, &[0.9], 0).is_err());
    }

    #[test]
    fn seeds_agree_up_to_contraction() {
        let sys = fast(1);
        let region = sys.fiber().region();
        let a = seed(&sys);
        let b: Vec<f64> = region.pieces()[1].center().iter().copied().collect();
        let ra = density_certificate(&sys, 0.71, 12, &a, 0).unwrap();
        let rb = density_certificate(&sys, 0.71, 12, &b, 0).unwrap();
        let slack = 2.0 * ra.lambda_eff.powi(12) * ra.diameter_a_hat;
        assert!((ra.covering_radius - rb.covering_radius).abs() <= slack);
    }

    #[test]
    fn csv_has_one_row_per_word() {
        let sys = fast(1);
        let s = seed(&sys);
        let report = density_certificate(&sys, 0.2, 3, &s, 0).unwrap();
        let mut buf = Vec::new();
        write_density_csv(&[report.clone(), report], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 17);
        assert!(text.starts_with("phi,word,x1\n0.2,0,"));
    }
}
