//! Skew products over `phi -> m phi`, their solenoid extension and perturbed
//! endomorphisms, behind one orbit/Jacobian interface.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fiber::{
    ball_samples, norm_and_det, smoothstep, smoothstep_slope, torus_grid, wrap_unit, FiberArc,
    MAX_FIBER_DIM,
};

/// Two disjoint arcs `L_i = [start_i, start_i + 1/m)` of the circle.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CircleArcPair {
    m: u32,
    starts: [f64; 2],
}

impl CircleArcPair {
    pub fn new(m: u32, start0: f64, start1: f64) -> Result<Self> {
        if m < 3 {
            return Err(Error::Usage(format!("m >= 3 required, got {m}")));
        }
        let len = 1.0 / m as f64;
        let (a, b) = (wrap_unit(start0), wrap_unit(start1));
        let gap = wrap_unit(b - a);
        if gap < len || 1.0 - gap < len {
            return Err(Error::Usage(format!(
                "arcs starting at {a} and {b} with length 1/{m} overlap"
            )));
        }
        Ok(Self { m, starts: [a, b] })
    }

    /// `L_0 = [0, 1/m)`, `L_1 = [1/2, 1/2 + 1/m)`.
    pub fn standard(m: u32) -> Result<Self> {
        Self::new(m, 0.0, 0.5)
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn start(&self, i: usize) -> f64 {
        self.starts[i]
    }

    pub fn len(&self) -> f64 {
        1.0 / self.m as f64
    }

    /// Position of `phi` past the start of `L_i`, in `[0, 1)`.
    fn offset(&self, i: usize, phi: f64) -> f64 {
        wrap_unit(phi - self.starts[i])
    }

    pub fn contains(&self, i: usize, phi: f64) -> bool {
        self.offset(i, phi) < self.len()
    }

    /// Length of the gap that follows `L_i`.
    fn gap_after(&self, i: usize) -> f64 {
        wrap_unit(self.starts[1 - i] - self.starts[i]) - self.len()
    }
}

/// `l(phi)` and `l'(phi)`: 0 on `L_0`, 1 on `L_1`, quintic smoothstep across
/// each gap.
pub fn transition_profile(arcs: &CircleArcPair, phi: f64) -> (f64, f64) {
    for i in 0..2 {
        let off = arcs.offset(i, phi);
        if off < arcs.len() {
            return (i as f64, 0.0);
        }
        let gap = arcs.gap_after(i);
        let s = (off - arcs.len()) / gap;
        if s < 1.0 {
            // Rising after L_0, falling after L_1.
            let sign = if i == 0 { 1.0 } else { -1.0 };
            let value = if i == 0 {
                smoothstep(s)
            } else {
                1.0 - smoothstep(s)
            };
            return (value, sign * smoothstep_slope(s) / gap);
        }
    }
    unreachable!("arcs and gaps partition the circle")
}

/// `m phi mod 1` with the rounding error of the product folded back in.
///
/// Exact for dyadic `phi` whose numerator times `m` fits in 53 bits.
pub fn base_map(m: u32, phi: f64) -> f64 {
    let mf = m as f64;
    let hi = mf * phi;
    let lo = mf.mul_add(phi, -hi);
    let mut r = (hi - hi.floor()) + lo;
    if r < 0.0 {
        r += 1.0;
    }
    if r >= 1.0 {
        r -= 1.0;
    }
    r
}

/// The `m`-preimage of `phi` that lies in `L_branch`.
pub fn preimage_branch(arcs: &CircleArcPair, phi: f64, branch: usize) -> f64 {
    let m = arcs.m as f64;
    let start = arcs.starts[branch];
    let phi = wrap_unit(phi);
    let mut j = (m * start - phi).ceil();
    let mut pre = (phi + j) / m;
    if pre < start {
        j += 1.0;
        pre = (phi + j) / m;
    } else if pre - start >= arcs.len() {
        j -= 1.0;
        pre = (phi + j) / m;
    }
    wrap_unit(pre)
}

/// A phase-space point: base angle, disk coordinate (solenoid only) and fiber
/// point. Only the first `d` fiber coordinates are meaningful.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct State {
    pub phi: f64,
    pub z: [f64; 2],
    pub x: [f64; MAX_FIBER_DIM],
}

impl State {
    pub fn new(phi: f64, x: &[f64]) -> Self {
        let mut s = Self {
            phi: wrap_unit(phi),
            z: [0.0; 2],
            x: [0.0; MAX_FIBER_DIM],
        };
        for (dst, src) in s.x.iter_mut().zip(x) {
            *dst = wrap_unit(*src);
        }
        s
    }

    pub fn with_disk(phi: f64, z: [f64; 2], x: &[f64]) -> Self {
        Self {
            z,
            ..Self::new(phi, x)
        }
    }
}

/// `F(phi, x) = (m phi mod 1, f_{l(phi)}(x))`.
#[derive(Clone, Debug)]
pub struct SkewSystem {
    arcs: CircleArcPair,
    fiber: Arc<FiberArc>,
}

impl SkewSystem {
    pub fn new(arcs: CircleArcPair, fiber: Arc<FiberArc>) -> Self {
        Self { arcs, fiber }
    }

    pub fn arcs(&self) -> &CircleArcPair {
        &self.arcs
    }

    pub fn fiber(&self) -> &FiberArc {
        &self.fiber
    }

    pub fn fiber_shared(&self) -> Arc<FiberArc> {
        Arc::clone(&self.fiber)
    }

    pub fn m(&self) -> u32 {
        self.arcs.m
    }

    /// The fiber map `f_phi`.
    pub fn fiber_map(&self, phi: f64, x: &[f64], out: &mut [f64]) {
        let (t, _) = transition_profile(&self.arcs, phi);
        self.fiber.eval_into(t, x, out);
    }

    fn step(&self, s: &State) -> State {
        let d = self.fiber.dim();
        let mut next = *s;
        next.phi = base_map(self.arcs.m, s.phi);
        let (t, _) = transition_profile(&self.arcs, s.phi);
        self.fiber.eval_into(t, &s.x[..d], &mut next.x[..d]);
        next
    }

    /// Jacobian rows/cols `(phi, x)` written at `offset` of the fiber block.
    fn jacobian_into(&self, s: &State, jac: &mut DMatrix<f64>, fiber_offset: usize) {
        let d = self.fiber.dim();
        let (t, dl) = transition_profile(&self.arcs, s.phi);
        jac[(0, 0)] = self.arcs.m as f64;
        let mut buf = [0.0; MAX_FIBER_DIM * MAX_FIBER_DIM];
        self.fiber.jacobian_into(t, &s.x[..d], &mut buf);
        let mut dt = [0.0; MAX_FIBER_DIM];
        self.fiber.d_dt_into(&s.x[..d], &mut dt);
        for i in 0..d {
            jac[(fiber_offset + i, 0)] = dl * dt[i];
            for j in 0..d {
                jac[(fiber_offset + i, fiber_offset + j)] = buf[i * d + j];
            }
        }
    }
}

/// `(phi, x) -> (m phi + eps1 g1, f_{l(phi)}(x) + eps2 g2)` with
/// `g1 = sin 2 pi (phi + x_1)` and `g2_i = cos 2 pi (phi + x_i)`.
#[derive(Clone, Debug)]
pub struct EndoSystem {
    skew: SkewSystem,
    eps1: f64,
    eps2: f64,
}

impl EndoSystem {
    pub fn new(skew: SkewSystem, eps1: f64, eps2: f64) -> Result<Self> {
        if !(eps1 >= 0.0 && eps2 >= 0.0) {
            return Err(Error::Usage(
                "perturbation sizes must be non-negative".into(),
            ));
        }
        Ok(Self { skew, eps1, eps2 })
    }

    pub fn skew(&self) -> &SkewSystem {
        &self.skew
    }

    pub fn eps(&self) -> (f64, f64) {
        (self.eps1, self.eps2)
    }

    fn step(&self, s: &State) -> State {
        let mut next = self.skew.step(s);
        let d = self.skew.fiber.dim();
        if self.eps1 != 0.0 {
            next.phi = wrap_unit(next.phi + self.eps1 * (2.0 * PI * (s.phi + s.x[0])).sin());
        }
        if self.eps2 != 0.0 {
            for i in 0..d {
                next.x[i] = wrap_unit(next.x[i] + self.eps2 * (2.0 * PI * (s.phi + s.x[i])).cos());
            }
        }
        next
    }

    fn jacobian_into(&self, s: &State, jac: &mut DMatrix<f64>, fiber_offset: usize) {
        self.skew.jacobian_into(s, jac, fiber_offset);
        let d = self.skew.fiber.dim();
        let c = 2.0 * PI * self.eps1 * (2.0 * PI * (s.phi + s.x[0])).cos();
        jac[(0, 0)] += c;
        jac[(0, fiber_offset)] += c;
        for i in 0..d {
            let g = -2.0 * PI * self.eps2 * (2.0 * PI * (s.phi + s.x[i])).sin();
            jac[(fiber_offset + i, 0)] += g;
            jac[(fiber_offset + i, fiber_offset + i)] += g;
        }
    }
}

/// Base map of a solenoid: either the skew product or a perturbation of it.
#[derive(Clone, Debug)]
pub enum PhaseMap {
    Skew(SkewSystem),
    Endo(EndoSystem),
}

impl PhaseMap {
    fn step(&self, s: &State) -> State {
        match self {
            PhaseMap::Skew(f) => f.step(s),
            PhaseMap::Endo(f) => f.step(s),
        }
    }

    fn jacobian_into(&self, s: &State, jac: &mut DMatrix<f64>, fiber_offset: usize) {
        match self {
            PhaseMap::Skew(f) => f.jacobian_into(s, jac, fiber_offset),
            PhaseMap::Endo(f) => f.jacobian_into(s, jac, fiber_offset),
        }
    }

    pub fn skew(&self) -> &SkewSystem {
        match self {
            PhaseMap::Skew(f) => f,
            PhaseMap::Endo(f) => &f.skew,
        }
    }
}

/// `(phi, z, x) -> (m phi, e^{2 pi i phi} + alpha z, f_phi(x))` on `S^1 x D x T^d`.
#[derive(Clone, Debug)]
pub struct SolenoidSystem {
    base: PhaseMap,
    radius: f64,
    alpha: f64,
}

pub const SOLENOID_RADIUS: f64 = 2.0;
pub const SOLENOID_ALPHA: f64 = 0.25;

impl SolenoidSystem {
    /// Requires `1 + alpha R <= R` (the disk maps into itself) and
    /// `alpha R < sin(pi / m)` (images of the `m` preimage slices are disjoint).
    pub fn new(base: PhaseMap, radius: f64, alpha: f64) -> Result<Self> {
        let m = base.skew().m() as f64;
        if !(alpha > 0.0 && 1.0 + alpha * radius <= radius) {
            return Err(Error::Usage(format!(
                "disk of radius {radius} is not mapped into itself with alpha {alpha}"
            )));
        }
        if !(alpha * radius < (PI / m).sin()) {
            return Err(Error::Usage(format!(
                "alpha * R = {} must be below sin(pi / m) = {} for injectivity",
                alpha * radius,
                (PI / m).sin()
            )));
        }
        Ok(Self {
            base,
            radius,
            alpha,
        })
    }

    pub fn base(&self) -> &PhaseMap {
        &self.base
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    fn step(&self, s: &State) -> State {
        let mut next = self.base.step(s);
        let (sin, cos) = (2.0 * PI * s.phi).sin_cos();
        next.z = [cos + self.alpha * s.z[0], sin + self.alpha * s.z[1]];
        next
    }
}

/// Any of the three systems, with state coordinates ordered `(phi, z, x)`
/// (`z` present for solenoids only).
#[derive(Clone, Debug)]
pub enum DynamicalSystem {
    Skew(SkewSystem),
    Endo(EndoSystem),
    Solenoid(SolenoidSystem),
}

impl DynamicalSystem {
    pub fn phase_skew(&self) -> &SkewSystem {
        match self {
            DynamicalSystem::Skew(f) => f,
            DynamicalSystem::Endo(f) => &f.skew,
            DynamicalSystem::Solenoid(f) => f.base.skew(),
        }
    }

    pub fn fiber(&self) -> &FiberArc {
        self.phase_skew().fiber()
    }

    pub fn fiber_dim(&self) -> usize {
        self.fiber().dim()
    }

    pub fn m(&self) -> u32 {
        self.phase_skew().m()
    }

    pub fn has_disk(&self) -> bool {
        matches!(self, DynamicalSystem::Solenoid(_))
    }

    /// True when the base angle evolves independently of the fiber.
    pub fn is_skew(&self) -> bool {
        match self {
            DynamicalSystem::Skew(_) => true,
            DynamicalSystem::Endo(_) => false,
            DynamicalSystem::Solenoid(s) => matches!(s.base, PhaseMap::Skew(_)),
        }
    }

    fn fiber_offset(&self) -> usize {
        if self.has_disk() {
            3
        } else {
            1
        }
    }

    pub fn state_dim(&self) -> usize {
        self.fiber_offset() + self.fiber_dim()
    }

    pub fn step(&self, s: &State) -> State {
        match self {
            DynamicalSystem::Skew(f) => f.step(s),
            DynamicalSystem::Endo(f) => f.step(s),
            DynamicalSystem::Solenoid(f) => f.step(s),
        }
    }

    /// Full Jacobian in the `(phi, z, x)` coordinates. The base derivative is
    /// exact; `d f / d phi = l'(phi) d f / dt` uses the analytic `t`-derivative.
    pub fn jacobian_into(&self, s: &State, jac: &mut DMatrix<f64>) {
        jac.fill(0.0);
        let off = self.fiber_offset();
        match self {
            DynamicalSystem::Skew(f) => f.jacobian_into(s, jac, off),
            DynamicalSystem::Endo(f) => f.jacobian_into(s, jac, off),
            DynamicalSystem::Solenoid(f) => {
                f.base.jacobian_into(s, jac, off);
                let (sin, cos) = (2.0 * PI * s.phi).sin_cos();
                jac[(1, 0)] = -2.0 * PI * sin;
                jac[(2, 0)] = 2.0 * PI * cos;
                jac[(1, 1)] = f.alpha;
                jac[(2, 2)] = f.alpha;
            }
        }
    }

    pub fn jacobian(&self, s: &State) -> DMatrix<f64> {
        let n = self.state_dim();
        let mut jac = DMatrix::zeros(n, n);
        self.jacobian_into(s, &mut jac);
        jac
    }
}

/// Result of the dominated-splitting bound on a `phi x x` grid.
#[derive(Clone, Debug, Serialize)]
pub struct MdscReport {
    /// `max(1/m + |d f^{+-1} / d phi|, |d f^{+-1} / dx|)`.
    pub l: f64,
    pub m: u32,
    pub passed: bool,
    pub margin: f64,
    pub max_phi_term: f64,
    pub max_x_term: f64,
    pub phi_samples: usize,
    pub x_samples: usize,
}

#[derive(Clone, Copy, Default)]
struct FiberBounds {
    /// `sup |d f / dt|` and `sup |d f^{-1} / dt|`.
    dt: f64,
    /// `sup |Df|` and `sup |Df^{-1}|`.
    dx: f64,
}

fn max_bounds(a: FiberBounds, b: FiberBounds) -> FiberBounds {
    FiberBounds {
        dt: a.dt.max(b.dt),
        dx: a.dx.max(b.dx),
    }
}

/// Forward and inverse fiber derivative bounds at parameter `t`.
fn fiber_bounds(fiber: &FiberArc, t: f64, xs: &[Vec<f64>]) -> Result<FiberBounds> {
    let d = fiber.dim();
    xs.par_iter()
        .map(|y| -> Result<FiberBounds> {
            let mut jac = [0.0; MAX_FIBER_DIM * MAX_FIBER_DIM];
            let mut dt = [0.0; MAX_FIBER_DIM];
            // Forward map at y.
            fiber.jacobian_into(t, y, &mut jac[..d * d]);
            fiber.d_dt_into(y, &mut dt[..d]);
            let forward = FiberBounds {
                dt: dt[..d].iter().map(|v| v * v).sum::<f64>().sqrt(),
                dx: norm_and_det(&jac[..d * d], d).0,
            };
            // Inverse map at y: D(f^-1)(y) = Df(x)^-1, d f^-1 / dt = -Df(x)^-1 df/dt(x).
            let mut x = [0.0; MAX_FIBER_DIM];
            fiber.inverse_into(t, y, &mut x[..d])?;
            fiber.jacobian_into(t, &x[..d], &mut jac[..d * d]);
            fiber.d_dt_into(&x[..d], &mut dt[..d]);
            let inv = DMatrix::from_row_slice(d, d, &jac[..d * d])
                .try_inverse()
                .ok_or_else(|| Error::Internal("singular fiber Jacobian".into()))?;
            let rows: Vec<f64> = (0..d * d).map(|i| inv[(i / d, i % d)]).collect();
            let dinv_dt = (0..d)
                .map(|i| (0..d).map(|j| inv[(i, j)] * dt[j]).sum::<f64>().powi(2))
                .sum::<f64>()
                .sqrt();
            let inverse = FiberBounds {
                dt: dinv_dt,
                dx: norm_and_det(&rows, d).0,
            };
            Ok(max_bounds(forward, inverse))
        })
        .try_reduce(FiberBounds::default, |a, b| Ok(max_bounds(a, b)))
}

/// Evaluates the dominated-splitting constant `L` on `phi_samples` base
/// points and about `x_samples` torus grid points (plus log-polar samples of
/// the blend region). Fiber bounds are computed once per distinct `t = l(phi)`.
pub fn mdsc_check(system: &SkewSystem, phi_samples: usize, x_samples: usize) -> Result<MdscReport> {
    let fiber = system.fiber();
    let d = fiber.dim();
    let mut xs = torus_grid(d, x_samples);
    xs.extend(ball_samples(d, fiber.r_check(), fiber.r_hat(), 32, 32));
    let m = system.m();
    let mut cache: Vec<(f64, FiberBounds)> = Vec::new();
    let mut max_phi_term = 0.0f64;
    let mut max_x_term = 0.0f64;
    for i in 0..phi_samples {
        let phi = i as f64 / phi_samples as f64;
        let (t, dl) = transition_profile(system.arcs(), phi);
        let bounds = match cache.iter().find(|(tc, _)| *tc == t) {
            Some((_, b)) => *b,
            None => {
                let b = fiber_bounds(fiber, t, &xs)?;
                cache.push((t, b));
                b
            }
        };
        max_phi_term = max_phi_term.max(1.0 / m as f64 + dl.abs() * bounds.dt);
        max_x_term = max_x_term.max(bounds.dx);
    }
    let l = max_phi_term.max(max_x_term);
    Ok(MdscReport {
        l,
        m,
        passed: l < m as f64,
        margin: m as f64 - l,
        max_phi_term,
        max_x_term,
        phi_samples,
        x_samples: xs.len(),
    })
}

/// Covering-degree check of a perturbed endomorphism.
#[derive(Clone, Debug, Serialize)]
pub struct DegreeReport {
    pub passed: bool,
    /// `m - eps1 * sup |d g1 / d phi|`.
    pub derivative_bound: f64,
    /// Smallest `d phi' / d phi` on the grid.
    pub min_derivative: f64,
    /// Degree of `phi -> phi'` on every sampled fiber slice (all equal when passed).
    pub degree: i64,
}

/// Checks that the base component is a degree-`m` monotone circle map on every
/// sampled fiber slice, so the perturbed map stays an `m`-to-1 covering.
pub fn covering_degree_check(
    system: &EndoSystem,
    phi_samples: usize,
    x_samples: usize,
) -> DegreeReport {
    let m = system.skew.m() as f64;
    let d = system.skew.fiber.dim();
    let bound = m - system.eps1 * 2.0 * PI;
    let xs = torus_grid(d, x_samples);
    let mut min_derivative = f64::INFINITY;
    let mut degree: Option<i64> = None;
    let mut consistent = true;
    for x in &xs {
        let mut total = 0.0;
        let mut prev = system.step(&State::new(0.0, x)).phi;
        for i in 1..=phi_samples {
            let phi = i as f64 / phi_samples as f64;
            let deriv = m + 2.0 * PI * system.eps1 * (2.0 * PI * (phi + x[0])).cos();
            min_derivative = min_derivative.min(deriv);
            let next = system.step(&State::new(phi, x)).phi;
            total += crate::fiber::torus_delta(next, prev);
            prev = next;
        }
        let deg = total.round() as i64;
        match degree {
            None => degree = Some(deg),
            Some(d0) if d0 != deg => consistent = false,
            _ => {}
        }
    }
    let degree = degree.unwrap_or(0);
    DegreeReport {
        passed: bound > 0.0 && min_derivative > 0.0 && consistent && degree == m as i64,
        derivative_bound: bound,
        min_derivative,
        degree,
    }
}
