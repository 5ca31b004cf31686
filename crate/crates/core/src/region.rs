//! Parallelotopes, their finite unions and the covering certifier.
//!
//! A strict inclusion `target ⋐ ∪ pieces` is made checkable by shrinking
//! every piece face-wise by a margin and proving, by adaptive bisection of
//! the target's parameter box, that each leaf cell lies inside one shrunk
//! piece. A cell is the affine image of a box, hence the convex hull of its
//! corners, and pieces are convex: corner membership is an exact test.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::affine::AffineMap;
use crate::error::{check_dim, Error, Result};

/// Slack on the `[-1, 1]` test in frame coordinates.
pub const MEMBERSHIP_SLACK: f64 = 1e-12;
/// Hard cap on the bisection depth.
pub const MAX_DEPTH_CAP: u32 = 40;
/// Cells examined before the certifier gives up and reports the current cell.
pub const CELL_BUDGET: usize = 2_000_000;

/// The image of `[-1, 1]^n` under an affine frame.
#[derive(Clone, Debug)]
pub struct Parallelotope {
    frame: AffineMap,
    inverse: Option<AffineMap>,
}

impl Parallelotope {
    pub fn from_frame(frame: AffineMap) -> Self {
        let inverse = if frame.linear().determinant().abs() > 1e-300 {
            frame.inverse().ok()
        } else {
            None
        };
        Self { frame, inverse }
    }

    /// Axis-aligned box with the given centre and half-widths.
    pub fn axis_box(center: &[f64], radii: &[f64]) -> Result<Self> {
        check_dim(center.len(), radii.len())?;
        let frame = AffineMap::new(
            DMatrix::from_diagonal(&DVector::from_column_slice(radii)),
            DVector::from_column_slice(center),
        )?;
        Ok(Self::from_frame(frame))
    }

    pub fn frame(&self) -> &AffineMap {
        &self.frame
    }

    pub fn dim(&self) -> usize {
        self.frame.dim()
    }

    pub fn center(&self) -> &DVector<f64> {
        self.frame.translation()
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        match &self.inverse {
            Some(inv) => {
                let w = inv.eval(x);
                w.iter().all(|c| c.abs() <= 1.0 + MEMBERSHIP_SLACK)
            }
            None => {
                // Degenerate frame: only the point case is supported.
                self.frame.linear().amax() == 0.0 && (x - self.center()).amax() <= MEMBERSHIP_SLACK
            }
        }
    }

    /// The `2^n` corners, enumerated by the bits of the corner index.
    pub fn vertices(&self) -> Vec<DVector<f64>> {
        let n = self.dim();
        (0..1usize << n)
            .map(|mask| {
                let w = DVector::from_iterator(
                    n,
                    (0..n).map(|i| if mask >> i & 1 == 1 { 1.0 } else { -1.0 }),
                );
                self.frame.eval(&w)
            })
            .collect()
    }

    pub fn mapped(&self, map: &AffineMap) -> Result<Self> {
        Ok(Self::from_frame(map.compose(&self.frame)?))
    }

    /// Inner parallel body: every facet moved inward by `delta`.
    ///
    /// Returns `None` when the body is empty. For rectangular frames the
    /// Hausdorff distance to `self` is at most `delta * sqrt(n)`.
    pub fn shrunk(&self, delta: f64) -> Option<Self> {
        if delta == 0.0 {
            return Some(self.clone());
        }
        let inv = self.inverse.as_ref()?;
        let n = self.dim();
        let mut linear = self.frame.linear().clone();
        for i in 0..n {
            let factor = 1.0 - delta * inv.linear().row(i).norm();
            if factor <= 0.0 {
                return None;
            }
            linear.column_mut(i).scale_mut(factor);
        }
        let frame = AffineMap::new(linear, self.center().clone()).ok()?;
        Some(Self::from_frame(frame))
    }

    /// Homothety about the centre.
    pub fn scaled(&self, factor: f64) -> Self {
        let frame = AffineMap::new(self.frame.linear() * factor, self.center().clone())
            .expect("same shape");
        Self::from_frame(frame)
    }

    pub fn bounding_box(&self) -> AxisBox {
        let n = self.dim();
        let half: Vec<f64> = (0..n)
            .map(|i| self.frame.linear().row(i).abs().sum())
            .collect();
        AxisBox {
            lo: (0..n).map(|i| self.center()[i] - half[i]).collect(),
            hi: (0..n).map(|i| self.center()[i] + half[i]).collect(),
        }
    }

    /// Largest distance from `origin` to a vertex.
    pub fn reach_from(&self, origin: &DVector<f64>) -> f64 {
        self.vertices()
            .iter()
            .map(|v| (v - origin).norm())
            .fold(0.0, f64::max)
    }
}

/// An ordered finite union of parallelotopes.
#[derive(Clone, Debug, Default)]
pub struct RegionUnion {
    pieces: Vec<Parallelotope>,
}

impl RegionUnion {
    pub fn new(pieces: Vec<Parallelotope>) -> Result<Self> {
        if let Some(first) = pieces.first() {
            let n = first.dim();
            for p in &pieces {
                check_dim(n, p.dim())?;
            }
        }
        Ok(Self { pieces })
    }

    pub fn single(piece: Parallelotope) -> Self {
        Self {
            pieces: vec![piece],
        }
    }

    pub fn pieces(&self) -> &[Parallelotope] {
        &self.pieces
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.pieces.first().map(Parallelotope::dim)
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        self.pieces.iter().any(|p| p.contains(x))
    }

    pub fn mapped(&self, map: &AffineMap) -> Result<Self> {
        let pieces = self
            .pieces
            .iter()
            .map(|p| p.mapped(map))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { pieces })
    }

    pub fn union(&self, other: &RegionUnion) -> Result<Self> {
        let mut pieces = self.pieces.clone();
        pieces.extend(other.pieces.iter().cloned());
        Self::new(pieces)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            pieces: self.pieces.iter().map(|p| p.scaled(factor)).collect(),
        }
    }

    /// Max pairwise distance over all vertices (a parallelotope attains its
    /// diameter at vertices).
    pub fn diameter(&self) -> Result<f64> {
        if self.pieces.is_empty() {
            return Err(Error::Domain("diameter of an empty region".into()));
        }
        let vertices: Vec<DVector<f64>> = self.pieces.iter().flat_map(|p| p.vertices()).collect();
        let mut best = 0.0f64;
        for (i, a) in vertices.iter().enumerate() {
            for b in &vertices[i + 1..] {
                best = best.max((a - b).norm());
            }
        }
        Ok(best)
    }

    pub fn bounding_box(&self) -> Option<AxisBox> {
        let mut boxes = self.pieces.iter().map(Parallelotope::bounding_box);
        let first = boxes.next()?;
        Some(boxes.fold(first, |acc, b| acc.hull(&b)))
    }
}

/// Axis-aligned box `[lo, hi]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AxisBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl AxisBox {
    fn hull(&self, other: &AxisBox) -> AxisBox {
        AxisBox {
            lo: self
                .lo
                .iter()
                .zip(&other.lo)
                .map(|(a, b)| a.min(*b))
                .collect(),
            hi: self
                .hi
                .iter()
                .zip(&other.hi)
                .map(|(a, b)| a.max(*b))
                .collect(),
        }
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }
}

/// Outcome of a covering certification.
#[derive(Clone, Debug, Serialize)]
pub struct CoverCertificate {
    pub covered: bool,
    #[serde(rename = "depth")]
    pub max_depth_used: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness_cell: Option<AxisBox>,
    pub margin: f64,
    pub cells: usize,
}

impl CoverCertificate {
    fn covered(depth: u32, margin: f64, cells: usize) -> Self {
        Self {
            covered: true,
            max_depth_used: depth,
            witness_cell: None,
            margin,
            cells,
        }
    }
}

/// Shrunk piece prepared for fast corner tests.
struct Probe {
    inverse: AffineMap,
}

impl Probe {
    fn contains_all(&self, corners: &[DVector<f64>]) -> bool {
        corners.iter().all(|c| {
            let w = self.inverse.eval(c);
            w.iter().all(|v| v.abs() <= 1.0 + MEMBERSHIP_SLACK)
        })
    }

    fn contains(&self, x: &DVector<f64>) -> bool {
        self.contains_all(std::slice::from_ref(x))
    }
}

struct Cell {
    lo: Vec<f64>,
    hi: Vec<f64>,
    depth: u32,
}

fn prepare(pieces: &RegionUnion, margin: f64) -> Vec<Probe> {
    pieces
        .pieces()
        .iter()
        .filter_map(|p| p.shrunk(margin))
        .filter_map(|p| p.inverse.map(|inverse| Probe { inverse }))
        .collect()
}

/// Certifies `target ⊂ ∪ shrink(piece, margin)` by breadth-first bisection.
///
/// A cell is accepted when all its corners lie in one shrunk piece. A cell
/// whose centre lies in no shrunk piece is a conclusive counterexample; a
/// cell still unresolved at `max_depth` is reported as inconclusive. Either
/// way `covered = false` with the cell (world bounding box) as witness.
pub fn certify_covered(
    target: &Parallelotope,
    pieces: &RegionUnion,
    margin: f64,
    max_depth: u32,
) -> CoverCertificate {
    let max_depth = max_depth.min(MAX_DEPTH_CAP);
    let n = target.dim();
    let probes = prepare(pieces, margin.max(0.0));
    let column_len: Vec<f64> = (0..n)
        .map(|i| target.frame().linear().column(i).norm())
        .collect();
    let mut queue = VecDeque::new();
    queue.push_back(Cell {
        lo: vec![-1.0; n],
        hi: vec![1.0; n],
        depth: 0,
    });
    let mut deepest = 0;
    let mut cells = 0usize;
    let mut corners = Vec::with_capacity(1 << n);
    while let Some(cell) = queue.pop_front() {
        cells += 1;
        deepest = deepest.max(cell.depth);
        corners.clear();
        for mask in 0..1usize << n {
            let w = DVector::from_iterator(
                n,
                (0..n).map(|i| {
                    if mask >> i & 1 == 1 {
                        cell.hi[i]
                    } else {
                        cell.lo[i]
                    }
                }),
            );
            corners.push(target.frame().eval(&w));
        }
        if probes.iter().any(|p| p.contains_all(&corners)) {
            continue;
        }
        let mid = DVector::from_iterator(n, (0..n).map(|i| 0.5 * (cell.lo[i] + cell.hi[i])));
        let center = target.frame().eval(&mid);
        let hopeless = !probes.iter().any(|p| p.contains(&center));
        if hopeless || cell.depth >= max_depth || cells >= CELL_BUDGET {
            let image = Parallelotope::from_frame(cell_frame(target, &cell));
            return CoverCertificate {
                covered: false,
                max_depth_used: deepest,
                witness_cell: Some(image.bounding_box()),
                margin,
                cells,
            };
        }
        let axis = (0..n)
            .max_by(|&a, &b| {
                let la = (cell.hi[a] - cell.lo[a]) * column_len[a];
                let lb = (cell.hi[b] - cell.lo[b]) * column_len[b];
                la.total_cmp(&lb).then(b.cmp(&a))
            })
            .expect("n >= 1");
        let split = 0.5 * (cell.lo[axis] + cell.hi[axis]);
        let mut left_hi = cell.hi.clone();
        left_hi[axis] = split;
        let mut right_lo = cell.lo.clone();
        right_lo[axis] = split;
        queue.push_back(Cell {
            lo: cell.lo,
            hi: left_hi,
            depth: cell.depth + 1,
        });
        queue.push_back(Cell {
            lo: right_lo,
            hi: cell.hi,
            depth: cell.depth + 1,
        });
    }
    CoverCertificate::covered(deepest, margin, cells)
}

fn cell_frame(target: &Parallelotope, cell: &Cell) -> AffineMap {
    let n = target.dim();
    let mid = DVector::from_iterator(n, (0..n).map(|i| 0.5 * (cell.lo[i] + cell.hi[i])));
    let half = DVector::from_iterator(n, (0..n).map(|i| 0.5 * (cell.hi[i] - cell.lo[i])));
    let local = AffineMap::new(DMatrix::from_diagonal(&half), mid).expect("square");
    target.frame().compose(&local).expect("same dimension")
}

/// Piecewise certification of a union target; stops at the first failure.
pub fn certify_region_covered(
    target: &RegionUnion,
    pieces: &RegionUnion,
    margin: f64,
    max_depth: u32,
) -> CoverCertificate {
    let mut deepest = 0;
    let mut cells = 0;
    for piece in target.pieces() {
        let cert = certify_covered(piece, pieces, margin, max_depth);
        deepest = deepest.max(cert.max_depth_used);
        cells += cert.cells;
        if !cert.covered {
            return CoverCertificate {
                max_depth_used: deepest,
                cells,
                ..cert
            };
        }
    }
    CoverCertificate::covered(deepest, margin, cells)
}

/// The region `A = ∪_{i,j} B_i^(j)` together with its construction certificates.
#[derive(Clone, Debug)]
pub struct RegionA {
    pub region: RegionUnion,
    /// `branches[i][j] = B_i^(j)` for `j = 0..=k`.
    pub branches: [Vec<Parallelotope>; 2],
    pub step_certificates: Vec<CoverCertificate>,
    pub final_certificate: CoverCertificate,
    pub shrink: f64,
}

/// Depth used for the final `B_0^(k) ∪ B_1^(k) ⋑ B` check.
pub const FINAL_COVER_DEPTH: u32 = 24;

/// Builds `B_i^(j+1) = shrink(E_i B_i^(j))` and certifies the chain.
///
/// Each step is certified with margin `shrink / 2` (it holds by construction);
/// the closing step `B_0^(k) ∪ B_1^(k) ⋑ B` is certified with margin `shrink`.
pub fn build_region_a(
    e0: &AffineMap,
    e1: &AffineMap,
    b: &Parallelotope,
    k: u32,
    shrink: f64,
) -> Result<RegionA> {
    if k == 0 {
        return Err(Error::Usage("k must be positive".into()));
    }
    if !(shrink >= 0.0) {
        return Err(Error::Usage("shrink must be non-negative".into()));
    }
    let maps = [e0, e1];
    let mut branches: [Vec<Parallelotope>; 2] = [vec![b.clone()], vec![b.clone()]];
    let mut step_certificates = Vec::with_capacity(2 * k as usize);
    for j in 0..k as usize {
        for i in 0..2 {
            let image = branches[i][j].mapped(maps[i])?;
            let next = image.shrunk(shrink).ok_or_else(|| {
                Error::Domain(format!(
                    "shrink {shrink} empties E_{i} B_{i}^({j}); use a smaller shrink"
                ))
            })?;
            let cert = certify_covered(&next, &RegionUnion::single(image), 0.5 * shrink, 4);
            if !cert.covered {
                return Err(Error::Internal(format!(
                    "step E_{i} B_{i}^({j}) ⋑ B_{i}^({}) failed to certify",
                    j + 1
                )));
            }
            step_certificates.push(cert);
            branches[i].push(next);
        }
    }
    let last = RegionUnion::new(vec![
        branches[0][k as usize].clone(),
        branches[1][k as usize].clone(),
    ])?;
    let final_certificate = certify_covered(b, &last, shrink, FINAL_COVER_DEPTH);
    if !final_certificate.covered {
        return Err(Error::Domain(format!(
            "final covering B_0^({k}) ∪ B_1^({k}) ⋑ B failed with shrink {shrink}; \
             use a smaller shrink or a box with larger covering slack"
        )));
    }
    let mut pieces = Vec::with_capacity(2 * k as usize);
    for branch in &branches {
        pieces.extend(branch[..k as usize].iter().cloned());
    }
    Ok(RegionA {
        region: RegionUnion::new(pieces)?,
        branches,
        step_certificates,
        final_certificate,
        shrink,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affine::{affine_kth_root, build_g, planar_rotation, BoxSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn unit_box(n: usize) -> Parallelotope {
        Parallelotope::axis_box(&vec![0.0; n], &vec![1.0; n]).unwrap()
    }

    fn spec_box() -> (BoxSpec, Parallelotope) {
        let spec = BoxSpec::new(0.9, vec![1.0, 0.7], 0.55).unwrap();
        let b = Parallelotope::axis_box(&[0.0, 0.0], &spec.radii).unwrap();
        (spec, b)
    }

    /// Dense-grid oracle: counts grid points of `target` outside every piece.
    fn grid_uncovered(target: &Parallelotope, pieces: &RegionUnion, per_axis: usize) -> usize {
        assert_eq!(target.dim(), 2);
        let mut missing = 0;
        for i in 0..per_axis {
            for j in 0..per_axis {
                let w = DVector::from_vec(vec![
                    -1.0 + 2.0 * (i as f64 + 0.5) / per_axis as f64,
                    -1.0 + 2.0 * (j as f64 + 0.5) / per_axis as f64,
                ]);
                if !pieces.contains(&target.frame().eval(&w)) {
                    missing += 1;
                }
            }
        }
        missing
    }

    #[test]
    fn contains_point_examples() {
        let b = unit_box(3);
        assert!(b.contains(&DVector::zeros(3)));
        assert!(!b.contains(&DVector::from_vec(vec![1.0 + 1e-6, 0.0, 0.0])));
        let rotated =
            Parallelotope::from_frame(AffineMap::linear_only(planar_rotation(PI / 4.0)).unwrap());
        assert!(rotated.contains(&DVector::from_vec(vec![1.2, 0.0])));
        assert!(!rotated.contains(&DVector::from_vec(vec![1.5, 0.0])));
    }

    #[test]
    fn vertices_count() {
        for n in 1..=5 {
            assert_eq!(unit_box(n).vertices().len(), 1 << n);
        }
    }

    #[test]
    fn certify_self_at_depth_zero() {
        let b = unit_box(2);
        let cert = certify_covered(&b, &RegionUnion::single(b.clone()), 0.0, 10);
        assert!(cert.covered);
        assert_eq!(cert.max_depth_used, 0);
    }

    #[test]
    fn strict_subset_cannot_cover() {
        let b = unit_box(2);
        let small = RegionUnion::single(b.scaled(0.9));
        let cert = certify_covered(&b, &small, 0.0, 20);
        assert!(!cert.covered);
        let w = cert.witness_cell.unwrap();
        let c = w.center();
        assert!(c.iter().any(|v| v.abs() > 0.85), "witness {w:?}");
        assert!(w.lo.iter().zip(&w.hi).all(|(l, h)| l <= h));
    }

    #[test]
    fn box_covered_by_two_images() {
        let (spec, b) = spec_box();
        let pieces = RegionUnion::new(vec![
            b.mapped(&build_g(&spec, 0.0)).unwrap(),
            b.mapped(&build_g(&spec, 1.0)).unwrap(),
        ])
        .unwrap();
        let cert = certify_covered(&b, &pieces, 0.05, 20);
        assert!(cert.covered);
        assert!(cert.max_depth_used <= 6);
        assert_eq!(grid_uncovered(&b, &pieces, 512), 0);

        // Just past the analytic slack 0.125 the certificate must fail.
        assert!(!certify_covered(&b, &pieces, 0.126, 30).covered);
        assert!(certify_covered(&b, &pieces, 0.12, 30).covered);
    }

    #[test]
    fn single_translate_does_not_cover() {
        let (spec, b) = spec_box();
        let one = RegionUnion::single(b.mapped(&build_g(&spec, 1.0)).unwrap());
        let cert = certify_covered(&b, &one, 0.0, 20);
        assert!(!cert.covered);
        assert!(grid_uncovered(&b, &one, 64) > 0);
        // The witness sits on the side the +s translate leaves uncovered.
        assert!(cert.witness_cell.unwrap().center()[0] < 0.0);
    }

    #[test]
    fn diameter_examples() {
        let b = RegionUnion::single(unit_box(2));
        assert!((b.diameter().unwrap() - 8f64.sqrt()).abs() < 1e-15);

        let point = RegionUnion::single(Parallelotope::axis_box(&[0.3, 0.1], &[0.0, 0.0]).unwrap());
        assert_eq!(point.diameter().unwrap(), 0.0);

        let two = RegionUnion::new(vec![
            unit_box(2),
            Parallelotope::axis_box(&[10.0, 0.0], &[1.0, 1.0]).unwrap(),
        ])
        .unwrap();
        // Brute force over the eight corners: farthest pair (-1, -1) and (11, 1).
        let corners = [
            (-1.0, -1.0),
            (-1.0, 1.0),
            (1.0, -1.0),
            (1.0, 1.0),
            (9.0, -1.0),
            (9.0, 1.0),
            (11.0, -1.0),
            (11.0, 1.0),
        ];
        let mut best = 0.0f64;
        for a in corners {
            for b in corners {
                best = best.max(f64::hypot(a.0 - b.0, a.1 - b.1));
            }
        }
        assert!((two.diameter().unwrap() - best).abs() < 1e-12);
        assert!((best - 148f64.sqrt()).abs() < 1e-12);
        assert!(RegionUnion::default().diameter().is_err());
    }

    #[test]
    fn shrink_is_strict_and_close() {
        let p = Parallelotope::from_frame(
            AffineMap::new(
                planar_rotation(0.4) * DMatrix::from_diagonal(&DVector::from_vec(vec![0.8, 0.3])),
                DVector::from_vec(vec![0.1, -0.2]),
            )
            .unwrap(),
        );
        let delta = 0.05;
        let s = p.shrunk(delta).unwrap();
        for v in s.vertices() {
            assert!(p.contains(&v));
        }
        // Hausdorff distance between the two boxes is the max vertex displacement.
        let hd = p
            .vertices()
            .iter()
            .zip(s.vertices())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(hd <= delta * 2f64.sqrt() + 1e-12);
        assert!(p.shrunk(0.31).is_none());
    }

    #[test]
    fn region_a_k1_degenerates_to_box() {
        let (spec, b) = spec_box();
        let g0 = build_g(&spec, 0.0);
        let g1 = build_g(&spec, 1.0);
        let a = build_region_a(&g0, &g1, &b, 1, 0.0).unwrap();
        assert_eq!(a.region.len(), 2);
        for p in a.region.pieces() {
            assert!((p.frame().linear() - b.frame().linear()).amax() == 0.0);
        }
        assert!(a.final_certificate.covered);
    }

    fn region_for(k: u32, shrink: f64) -> Result<(AffineMap, AffineMap, RegionA)> {
        let (spec, b) = spec_box();
        let e0 = affine_kth_root(&build_g(&spec, 0.0), k)?;
        let e1 = affine_kth_root(&build_g(&spec, 1.0), k)?;
        let a = build_region_a(&e0, &e1, &b, k, shrink)?;
        Ok((e0, e1, a))
    }

    #[test]
    fn region_a_k9() {
        let (e0, e1, a) = region_for(9, 0.002).unwrap();
        assert_eq!(a.region.len(), 18);
        assert!(a.step_certificates.iter().all(|c| c.covered));
        let images = a
            .region
            .mapped(&e0)
            .unwrap()
            .union(&a.region.mapped(&e1).unwrap())
            .unwrap();
        let cert = certify_region_covered(&a.region, &images, 1e-3, 30);
        assert!(cert.covered);
        for piece in a.region.pieces() {
            assert_eq!(grid_uncovered(piece, &images, 96), 0);
        }
        assert!(certify_region_covered(&a.region, &a.region, 0.0, 4).covered);

        let only = a.region.mapped(&e0).unwrap();
        let cert = certify_region_covered(&a.region, &only, 0.0, 24);
        assert!(!cert.covered);
        assert!(a
            .region
            .pieces()
            .iter()
            .any(|p| grid_uncovered(p, &only, 64) > 0));
    }

    #[test]
    fn region_a_rejects_large_shrink() {
        let err = region_for(9, 0.3).map(|_| ()).unwrap_err();
        let text = err.to_string();
        assert!(text.contains("shrink"), "{text}");
    }

    #[test]
    fn certificates_are_deterministic() {
        let b = unit_box(2);
        let pieces = RegionUnion::single(b.scaled(0.95));
        let a = certify_covered(&b, &pieces, 0.0, 16);
        let c = certify_covered(&b, &pieces, 0.0, 16);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&c).unwrap()
        );
    }

    #[test]
    fn soundness_by_sampling() {
        let (spec, b) = spec_box();
        let pieces = RegionUnion::new(vec![
            b.mapped(&build_g(&spec, 0.0)).unwrap(),
            b.mapped(&build_g(&spec, 1.0)).unwrap(),
        ])
        .unwrap();
        assert!(certify_covered(&b, &pieces, 0.05, 20).covered);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1_000_000 {
            let x = DVector::from_vec(vec![rng.gen_range(-1.0..=1.0), rng.gen_range(-0.7..=0.7)]);
            assert!(pieces.contains(&x));
        }
    }
}
