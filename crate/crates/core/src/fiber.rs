//! The torus fiber `T^d`, the Morse gradient flow and the glued arc `t -> f_t`.
//!
//! Chart coordinates are `x in [0, 1)^d`; `p = (1/2, ..., 1/2)` is the unique
//! minimum of `H(x) = sum_i (1 - cos 2 pi (x_i - 1/2)) / (2 pi)^2`. Around `p`
//! the fiber map is the affine `E_t` on the small ball `A_check`, the time-tau
//! gradient flow `S` outside the ball `A_hat`, and a radial blend in between.
//! The blend weight is a quintic smoothstep in `log r`, which keeps the twist
//! of the rotating `E_t` spread evenly across the annulus.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::affine::{
    affine_kth_root, build_box_spec, build_g, closeness_to_identity, AffineMap, BoxSpec,
};
use crate::error::{check_dim, Error, Result};
use crate::region::{
    build_region_a, certify_region_covered, CoverCertificate, Parallelotope, RegionA, RegionUnion,
};

pub const MAX_FIBER_DIM: usize = 6;
/// Largest RK4 step of the gradient flow.
pub const FLOW_STEP: f64 = 0.01;
pub const INVERSE_TOLERANCE: f64 = 1e-10;
pub const INVERSE_MAX_ITER: usize = 50;
/// Largest k tried when choosing the root order from an epsilon target.
pub const MAX_ROOT_ORDER: u32 = 64;

/// Maps a real number to `[0, 1)`.
pub fn wrap_unit(v: f64) -> f64 {
    let r = v.rem_euclid(1.0);
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// The representative of `a - b` in `[-1/2, 1/2)`.
pub fn torus_delta(a: f64, b: f64) -> f64 {
    let d = a - b;
    d - (d + 0.5).floor()
}

/// A point of the flat torus.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TorusPoint {
    coords: Vec<f64>,
}

impl TorusPoint {
    /// Wraps every coordinate into `[0, 1)`.
    pub fn new(coords: Vec<f64>) -> Self {
        Self {
            coords: coords.into_iter().map(wrap_unit).collect(),
        }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    /// Flat distance, minimised over integer shifts.
    pub fn distance(&self, other: &TorusPoint) -> f64 {
        self.coords
            .iter()
            .zip(&other.coords)
            .map(|(a, b)| torus_delta(*a, *b).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

fn flow_rhs(u: f64) -> f64 {
    -(2.0 * PI * u).sin() / (2.0 * PI)
}

/// Time-`tau` flow of one coordinate `u = x - 1/2` and its derivative in `u`.
///
/// Negative `tau` integrates backwards, which inverts the map up to the
/// integration error.
pub fn flow_coordinate(u0: f64, tau: f64) -> (f64, f64) {
    if tau == 0.0 {
        return (u0, 1.0);
    }
    let steps = (tau.abs() / FLOW_STEP).ceil().max(1.0);
    let h = tau / steps;
    let (mut u, mut du) = (u0, 1.0);
    for _ in 0..steps as usize {
        let a = -(2.0 * PI * u).cos();
        let k1 = flow_rhs(u);
        let d1 = a * du;
        let u2 = u + 0.5 * h * k1;
        let k2 = flow_rhs(u2);
        let d2 = -(2.0 * PI * u2).cos() * (du + 0.5 * h * d1);
        let u3 = u + 0.5 * h * k2;
        let k3 = flow_rhs(u3);
        let d3 = -(2.0 * PI * u3).cos() * (du + 0.5 * h * d2);
        let u4 = u + h * k3;
        let k4 = flow_rhs(u4);
        let d4 = -(2.0 * PI * u4).cos() * (du + h * d3);
        u += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        du += h / 6.0 * (d1 + 2.0 * d2 + 2.0 * d3 + d4);
    }
    (u, du)
}

/// Time-`tau` map of the descending gradient flow of `H`.
pub fn morse_flow_map(tau: f64, x: &TorusPoint) -> Result<TorusPoint> {
    if !(tau >= 0.0) {
        return Err(Error::Usage(format!(
            "flow time must be non-negative, got {tau}"
        )));
    }
    let coords = x
        .coords
        .iter()
        .map(|&c| 0.5 + flow_coordinate(torus_delta(c, 0.5), tau).0)
        .collect();
    Ok(TorusPoint::new(coords))
}

/// Upper bound on the C¹ distance of the time-`tau` map to the identity.
///
/// Each coordinate moves at speed at most `1 / (2 pi)`; the derivative ranges
/// from `e^-tau` at the minimum to `e^tau` at the maximum of `H`.
pub fn morse_flow_closeness(tau: f64, d: usize) -> f64 {
    tau.exp_m1() + tau * (d as f64).sqrt() / (2.0 * PI)
}

/// Largest flow time whose closeness bound stays below `budget`.
pub fn flow_time_for_budget(budget: f64, d: usize) -> f64 {
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if morse_flow_closeness(mid, d) < budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Quintic smoothstep `s^3 (10 - 15 s + 6 s^2)`, clamped to `[0, 1]`.
pub fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * s * (10.0 + s * (-15.0 + 6.0 * s))
}

pub fn smoothstep_slope(s: f64) -> f64 {
    if !(0.0..=1.0).contains(&s) {
        return 0.0;
    }
    30.0 * s * s * (1.0 - s) * (1.0 - s)
}

/// Inputs of [`FiberArc::build`].
#[derive(Clone, Debug, Serialize)]
pub struct FiberParams {
    pub d: usize,
    pub lambda: f64,
    /// Root order; chosen from `epsilon` when absent and `enforce_epsilon`.
    pub k: Option<u32>,
    pub epsilon: f64,
    /// When false the epsilon targets only feed reports.
    pub enforce_epsilon: bool,
    pub r_hat: f64,
    pub r_check: f64,
    /// Flow time; chosen automatically when absent.
    pub tau: Option<f64>,
    /// Shrink of the region construction; `covering_slack / (2k)` by default.
    pub shrink: Option<f64>,
    /// Box data; `build_box_spec(d, lambda)` by default.
    pub box_spec: Option<BoxSpec>,
}

impl FiberParams {
    pub fn new(d: usize, lambda: f64, r_hat: f64, r_check: f64) -> Self {
        Self {
            d,
            lambda,
            k: Some(1),
            epsilon: 0.25,
            enforce_epsilon: false,
            r_hat,
            r_check,
            tau: None,
            shrink: None,
            box_spec: None,
        }
    }
}

/// The arc `t -> f_t` of fiber diffeomorphisms.
#[derive(Clone, Debug)]
pub struct FiberArc {
    d: usize,
    k: u32,
    tau: f64,
    r_hat: f64,
    r_check: f64,
    log_ratio: f64,
    scale: f64,
    spec: BoxSpec,
    e_box: [AffineMap; 2],
    e_chart: [AffineMap; 2],
    /// Row-major linear part shared by every `E_t`.
    linear: Vec<f64>,
    linear_inverse: AffineMap,
    /// `E_t(p) - p` at `t = 0, 1`.
    shift: [Vec<f64>; 2],
    region_box: RegionA,
    region: RegionUnion,
    tau_candidates: Vec<f64>,
}

/// Coarse contraction/diffeomorphism screen used to pick the flow time.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct CoarseScreen {
    pub tau: f64,
    pub sup_norm: f64,
    pub min_det: f64,
    pub trap_margin: f64,
}

impl CoarseScreen {
    pub fn passed(&self) -> bool {
        self.sup_norm < 1.0 && self.min_det > 0.0 && self.trap_margin > 0.0
    }
}

fn validate(params: &FiberParams) -> Result<()> {
    if params.d == 0 || params.d > MAX_FIBER_DIM {
        return Err(Error::Usage(format!(
            "fiber dimension must be in 1..={MAX_FIBER_DIM}, got {}",
            params.d
        )));
    }
    if !(params.r_check > 0.0 && params.r_check < params.r_hat) {
        return Err(Error::Usage(format!(
            "need 0 < r_check < r_hat, got r_check = {}, r_hat = {}",
            params.r_check, params.r_hat
        )));
    }
    if !(params.r_hat < 0.25) {
        return Err(Error::Usage(format!(
            "r_hat must be below 1/4, got {}",
            params.r_hat
        )));
    }
    if !(params.epsilon > 0.0) {
        return Err(Error::Usage("epsilon must be positive".into()));
    }
    if let Some(tau) = params.tau {
        if !(tau >= 0.0) {
            return Err(Error::Usage(format!("tau must be non-negative, got {tau}")));
        }
    }
    Ok(())
}

/// Largest chart scale keeping every `E_t` fixed point and `E_t(A_check)`
/// inside `A_check`, for roots with linear rate `mu` and box translations `b`.
fn scale_bound(mu: f64, r_check: f64, roots: &[AffineMap; 2]) -> f64 {
    let b = roots
        .iter()
        .map(|e| e.translation().norm())
        .fold(0.0, f64::max);
    if b == 0.0 {
        f64::INFINITY
    } else {
        0.9 * (1.0 - mu) * r_check / b
    }
}

fn roots_for(spec: &BoxSpec, k: u32) -> Result<[AffineMap; 2]> {
    Ok([
        affine_kth_root(&build_g(spec, 0.0), k)?,
        affine_kth_root(&build_g(spec, 1.0), k)?,
    ])
}

/// Chart-coordinate closeness of `E_0, E_1` to the identity on `A_check`.
///
/// Translation parts are linear in `t`, so the endpoints bound the arc.
fn chart_closeness(roots: &[AffineMap; 2], scale: f64, r_check: f64) -> f64 {
    roots
        .iter()
        .map(|e| {
            let chart =
                AffineMap::new(e.linear().clone(), e.translation() * scale).expect("square");
            closeness_to_identity(&chart, r_check)
        })
        .fold(0.0, f64::max)
}

/// Smallest `k` in `1..=64` whose roots are within `epsilon / 2` of the
/// identity on `A_check` (using the largest admissible chart scale).
pub fn select_root_order(spec: &BoxSpec, epsilon: f64, r_check: f64) -> Result<u32> {
    for k in 1..=MAX_ROOT_ORDER {
        let roots = roots_for(spec, k)?;
        let mu = spec.lambda.powf(1.0 / k as f64);
        let scale = scale_bound(mu, r_check, &roots).min(1.0);
        if chart_closeness(&roots, scale, r_check) < 0.5 * epsilon {
            return Ok(k);
        }
    }
    Err(Error::Domain(format!(
        "no k <= {MAX_ROOT_ORDER} brings E_t within {} of the identity",
        0.5 * epsilon
    )))
}

/// Distance from the origin to the farthest vertex or fixed point.
fn region_reach(region: &RegionUnion, roots: &[AffineMap]) -> Result<f64> {
    let origin = DVector::zeros(region.dim().unwrap_or(0));
    let mut reach = region
        .pieces()
        .iter()
        .map(|p| p.reach_from(&origin))
        .fold(0.0, f64::max);
    for e in roots {
        reach = reach.max(e.fixed_point()?.norm());
    }
    Ok(reach)
}

impl FiberArc {
    pub fn build(params: &FiberParams) -> Result<Self> {
        validate(params)?;
        let d = params.d;
        let spec = match &params.box_spec {
            Some(spec) => {
                check_dim(d, spec.n)?;
                spec.clone()
            }
            None => build_box_spec(d, params.lambda)?,
        };
        let k = match params.k {
            Some(0) => return Err(Error::Usage("k must be positive".into())),
            Some(k) => k,
            None if params.enforce_epsilon => {
                select_root_order(&spec, params.epsilon, params.r_check)?
            }
            None => 1,
        };
        let e_box = roots_for(&spec, k)?;
        let shrink = params
            .shrink
            .unwrap_or_else(|| spec.covering_slack() / (2.0 * k as f64));
        let b = Parallelotope::axis_box(&vec![0.0; d], &spec.radii)?;
        let region_box = build_region_a(&e_box[0], &e_box[1], &b, k, shrink)?;
        let mu = spec.lambda.powf(1.0 / k as f64);
        let reach = region_reach(&region_box.region, &e_box)?;
        let scale = scale_bound(mu, params.r_check, &e_box).min(0.8 * params.r_check / reach);

        let mut arc = Self::assemble(
            d,
            k,
            0.0,
            params.r_hat,
            params.r_check,
            scale,
            spec,
            e_box,
            region_box,
        )?;
        arc.check_invariance()?;

        let candidates = match params.tau {
            Some(tau) => vec![tau],
            None => arc.flow_time_candidates(mu, params),
        };
        let mut best: Option<CoarseScreen> = None;
        for &tau in &candidates {
            arc.tau = tau;
            let screen = arc.coarse_screen();
            log::debug!("flow time candidate {tau}: {screen:?}");
            let better = match &best {
                None => true,
                Some(b) => !b.passed() && (screen.passed() || screen.sup_norm < b.sup_norm),
            };
            if better {
                best = Some(screen);
            }
            if screen.passed() {
                break;
            }
        }
        arc.tau = best.map(|b| b.tau).unwrap_or(0.0);
        arc.tau_candidates = candidates;
        Ok(arc)
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        d: usize,
        k: u32,
        tau: f64,
        r_hat: f64,
        r_check: f64,
        scale: f64,
        spec: BoxSpec,
        e_box: [AffineMap; 2],
        region_box: RegionA,
    ) -> Result<Self> {
        let p = DVector::from_element(d, 0.5);
        let to_chart = AffineMap::new(DMatrix::identity(d, d) * scale, p.clone())?;
        let linear_m = e_box[0].linear().clone();
        let chart = |e: &AffineMap| -> Result<AffineMap> {
            let translation = &p - &linear_m * &p + e.translation() * scale;
            AffineMap::new(linear_m.clone(), translation)
        };
        let e_chart = [chart(&e_box[0])?, chart(&e_box[1])?];
        let shift = [
            (e_box[0].translation() * scale).iter().copied().collect(),
            (e_box[1].translation() * scale).iter().copied().collect(),
        ];
        let linear = (0..d * d).map(|i| linear_m[(i / d, i % d)]).collect();
        let linear_inverse = e_chart[0].inverse()?;
        let region = region_box.region.mapped(&to_chart)?;
        Ok(Self {
            d,
            k,
            tau,
            r_hat,
            r_check,
            log_ratio: (r_hat / r_check).ln(),
            scale,
            spec,
            e_box,
            e_chart,
            linear,
            linear_inverse,
            shift,
            region_box,
            region,
            tau_candidates: Vec::new(),
        })
    }

    /// Degenerate arc: `E_t = Id` for every `t` and `tau = 0`, so `f_t = Id`.
    pub fn identity(d: usize, r_hat: f64, r_check: f64) -> Result<Self> {
        let mut params = FiberParams::new(d, 0.9, r_hat, r_check);
        params.tau = Some(0.0);
        validate(&params)?;
        let spec = build_box_spec(d, 0.9)?;
        let id = AffineMap::identity(d);
        let b = Parallelotope::axis_box(&vec![0.0; d], &spec.radii)?;
        let region_box = build_region_a(&id, &id, &b, 1, 0.0)?;
        let e_box = [id.clone(), id];
        let reach = region_reach(&region_box.region, &[])?;
        Self::assemble(
            d,
            1,
            0.0,
            r_hat,
            r_check,
            0.8 * r_check / reach,
            spec,
            e_box,
            region_box,
        )
    }

    fn flow_time_candidates(&self, mu: f64, params: &FiberParams) -> Vec<f64> {
        let r_mid = (self.r_hat * self.r_check).sqrt();
        let matched = -mu.ln() / (2.0 * PI * r_mid).cos();
        let budget = flow_time_for_budget(0.5 * params.epsilon, self.d);
        let mut out = Vec::new();
        if params.enforce_epsilon {
            out.push(budget);
            out.extend(
                (0..6)
                    .map(|j| budget / f64::powi(2.0, j + 1))
                    .filter(|&t| t > matched),
            );
            out.push(matched.min(budget));
        } else {
            out.extend((0..8).map(|j| matched * f64::powi(2.0, j)));
        }
        out
    }

    /// `|E_t(p) - p| + mu r_check < r_check` at the arc endpoints (the
    /// translation is affine in `t`, so the endpoints bound every `t`).
    fn check_invariance(&self) -> Result<()> {
        let mu = self.contraction_rate();
        for s in &self.shift {
            let reach = mu * self.r_check + s.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(reach < self.r_check) {
                return Err(Error::Domain(format!(
                    "E_t does not map A_check into itself ({reach} >= {}); use a larger k or a smaller scale",
                    self.r_check
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn r_hat(&self) -> f64 {
        self.r_hat
    }

    pub fn r_check(&self) -> f64 {
        self.r_check
    }

    /// Box-to-chart scale factor.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn box_spec(&self) -> &BoxSpec {
        &self.spec
    }

    pub fn flow_time_candidates_tried(&self) -> &[f64] {
        &self.tau_candidates
    }

    /// `lambda^(1/k)`, the operator norm shared by all `E_t`.
    pub fn contraction_rate(&self) -> f64 {
        self.e_box[0].operator_norm()
    }

    /// `E_i` in box coordinates.
    pub fn root_box(&self, i: usize) -> &AffineMap {
        &self.e_box[i]
    }

    /// `E_i` in chart coordinates.
    pub fn root_chart(&self, i: usize) -> &AffineMap {
        &self.e_chart[i]
    }

    /// The region `A` in box coordinates, with its construction certificates.
    pub fn region_box(&self) -> &RegionA {
        &self.region_box
    }

    /// The region `A` in chart coordinates.
    pub fn region(&self) -> &RegionUnion {
        &self.region
    }

    /// Euclidean chart distance from `p`.
    pub fn radius_of(&self, x: &[f64]) -> f64 {
        x.iter()
            .map(|&c| torus_delta(c, 0.5).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    fn blend(&self, r: f64) -> (f64, f64) {
        if r <= self.r_check {
            (1.0, 0.0)
        } else if r >= self.r_hat {
            (0.0, 0.0)
        } else {
            let s = (r / self.r_check).ln() / self.log_ratio;
            (
                1.0 - smoothstep(s),
                -smoothstep_slope(s) / (r * self.log_ratio),
            )
        }
    }

    fn shift_at(&self, t: f64, i: usize) -> f64 {
        (1.0 - t) * self.shift[0][i] + t * self.shift[1][i]
    }

    /// `f_t(x)` written into `out`.
    pub fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let d = self.d;
        let mut u = [0.0; MAX_FIBER_DIM];
        for i in 0..d {
            u[i] = torus_delta(x[i], 0.5);
        }
        let r = u[..d].iter().map(|v| v * v).sum::<f64>().sqrt();
        if r <= self.r_check {
            self.eval_affine(t, x, out);
            return;
        }
        let (beta, _) = self.blend(r);
        for i in 0..d {
            let s = flow_coordinate(u[i], self.tau).0;
            let v = if beta > 0.0 {
                let mut e = self.shift_at(t, i);
                for j in 0..d {
                    e += self.linear[i * d + j] * u[j];
                }
                s + beta * (e - s)
            } else {
                s
            };
            out[i] = wrap_unit(0.5 + v);
        }
    }

    fn eval_affine(&self, t: f64, x: &[f64], out: &mut [f64]) {
        if t == 0.0 || t == 1.0 {
            self.e_chart[t as usize].eval_slice(x, out);
        } else {
            let (a, b) = (self.e_chart[0].translation(), self.e_chart[1].translation());
            let d = self.d;
            for i in 0..d {
                let mut acc = (1.0 - t) * a[i] + t * b[i];
                for j in 0..d {
                    acc += self.linear[i * d + j] * x[j];
                }
                out[i] = acc;
            }
        }
        for v in out.iter_mut().take(self.d) {
            *v = wrap_unit(*v);
        }
    }

    /// Row-major Jacobian of `f_t` at `x`.
    pub fn jacobian_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let d = self.d;
        let mut u = [0.0; MAX_FIBER_DIM];
        for i in 0..d {
            u[i] = torus_delta(x[i], 0.5);
        }
        let r = u[..d].iter().map(|v| v * v).sum::<f64>().sqrt();
        if r <= self.r_check {
            out[..d * d].copy_from_slice(&self.linear);
            return;
        }
        let (beta, dbeta) = self.blend(r);
        for i in 0..d {
            let (s, ds) = flow_coordinate(u[i], self.tau);
            let mut e = self.shift_at(t, i);
            for j in 0..d {
                e += self.linear[i * d + j] * u[j];
            }
            for j in 0..d {
                let dsij = if i == j { ds } else { 0.0 };
                out[i * d + j] = (1.0 - beta) * dsij
                    + beta * self.linear[i * d + j]
                    + (e - s) * dbeta * u[j] / r;
            }
        }
    }

    /// `d f_t(x) / dt`. Only the translation of `E_t` depends on `t`, and it
    /// does so linearly.
    pub fn d_dt_into(&self, x: &[f64], out: &mut [f64]) {
        let r = self.radius_of(x);
        let (beta, _) = self.blend(r);
        for i in 0..self.d {
            out[i] = beta * (self.shift[1][i] - self.shift[0][i]);
        }
    }

    pub fn eval(&self, t: f64, x: &TorusPoint) -> Result<TorusPoint> {
        check_dim(self.d, x.dim())?;
        let mut out = vec![0.0; self.d];
        self.eval_into(t, x.coords(), &mut out);
        Ok(TorusPoint { coords: out })
    }

    pub fn jacobian(&self, t: f64, x: &TorusPoint) -> Result<DMatrix<f64>> {
        check_dim(self.d, x.dim())?;
        let mut out = vec![0.0; self.d * self.d];
        self.jacobian_into(t, x.coords(), &mut out);
        Ok(DMatrix::from_row_slice(self.d, self.d, &out))
    }

    fn residual(&self, t: f64, x: &[f64], y: &[f64], buf: &mut [f64]) -> f64 {
        self.eval_into(t, x, buf);
        let mut norm = 0.0;
        for i in 0..self.d {
            buf[i] = torus_delta(buf[i], y[i]);
            norm += buf[i] * buf[i];
        }
        norm.sqrt()
    }

    /// `f_t^{-1}(y)` by damped Newton iteration, seeded with the affine or
    /// backward-flow preimage.
    pub fn inverse_into(&self, t: f64, y: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.d;
        let mut buf = [0.0; MAX_FIBER_DIM];
        // Affine guess.
        let mut x = [0.0; MAX_FIBER_DIM];
        let a = if t == 0.0 || t == 1.0 {
            self.e_chart[t as usize].translation().clone()
        } else {
            self.e_chart[0].translation() * (1.0 - t) + self.e_chart[1].translation() * t
        };
        for i in 0..d {
            let mut acc = self.linear_inverse.translation()[i];
            for j in 0..d {
                acc += self.linear_inverse.linear()[(i, j)]
                    * (y[j] - (a[j] - self.e_chart[0].translation()[j]));
            }
            x[i] = acc;
        }
        let affine_ok = self.radius_of(&x[..d]) <= self.r_check;
        if !affine_ok {
            for i in 0..d {
                x[i] = 0.5 + flow_coordinate(torus_delta(y[i], 0.5), -self.tau).0;
            }
        }
        let mut res = self.residual(t, &x[..d], y, &mut buf);
        let mut jac = vec![0.0; d * d];
        let mut iter = 0;
        while res > INVERSE_TOLERANCE {
            if iter == INVERSE_MAX_ITER {
                return Err(Error::Internal(format!(
                    "fiber inverse did not converge (residual {res:e})"
                )));
            }
            iter += 1;
            self.jacobian_into(t, &x[..d], &mut jac);
            let m = DMatrix::from_row_slice(d, d, &jac);
            let rhs = DVector::from_column_slice(&buf[..d]);
            let step = m
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::Internal("singular fiber Jacobian in inverse".into()))?;
            let mut damping = 1.0;
            let mut trial = [0.0; MAX_FIBER_DIM];
            let mut trial_buf = [0.0; MAX_FIBER_DIM];
            loop {
                for i in 0..d {
                    trial[i] = wrap_unit(x[i] - damping * step[i]);
                }
                let r = self.residual(t, &trial[..d], y, &mut trial_buf);
                if r < res || damping < 1e-6 {
                    x = trial;
                    buf = trial_buf;
                    res = r;
                    break;
                }
                damping *= 0.5;
            }
        }
        for i in 0..d {
            out[i] = wrap_unit(x[i]);
        }
        Ok(())
    }

    pub fn inverse(&self, t: f64, y: &TorusPoint) -> Result<TorusPoint> {
        check_dim(self.d, y.dim())?;
        let mut out = vec![0.0; self.d];
        self.inverse_into(t, y.coords(), &mut out)?;
        Ok(TorusPoint { coords: out })
    }

    fn coarse_screen(&self) -> CoarseScreen {
        let samples = ball_samples(self.d, self.r_check, self.r_hat, 24, 16);
        let mut sup_norm = 0.0f64;
        let mut min_det = f64::INFINITY;
        let mut jac = vec![0.0; self.d * self.d];
        for t in [0.0, 0.5, 1.0] {
            for x in &samples {
                self.jacobian_into(t, x, &mut jac);
                let (norm, det) = norm_and_det(&jac, self.d);
                sup_norm = sup_norm.max(norm);
                min_det = min_det.min(det);
            }
        }
        CoarseScreen {
            tau: self.tau,
            sup_norm,
            min_det,
            trap_margin: self.trap_margin(16),
        }
    }

    /// `r_hat - max |f_t(x) - p|` over boundary samples of `A_hat`, `t` in
    /// `{0, 0.1, ..., 1}`.
    pub fn trap_margin(&self, directions: usize) -> f64 {
        let mut worst = 0.0f64;
        let mut out = [0.0; MAX_FIBER_DIM];
        for dir in sphere_directions(self.d, directions) {
            let x: Vec<f64> = dir.iter().map(|v| 0.5 + self.r_hat * v).collect();
            for i in 0..=10 {
                self.eval_into(i as f64 / 10.0, &x, &mut out[..self.d]);
                worst = worst.max(self.radius_of(&out[..self.d]));
            }
        }
        self.r_hat - worst
    }
}

/// Operator 2-norm and determinant of a small row-major matrix.
pub fn norm_and_det(m: &[f64], d: usize) -> (f64, f64) {
    match d {
        1 => (m[0].abs(), m[0]),
        2 => {
            let det = m[0] * m[3] - m[1] * m[2];
            let fro = m.iter().map(|v| v * v).sum::<f64>();
            let disc = (fro * fro - 4.0 * det * det).max(0.0).sqrt();
            ((0.5 * (fro + disc)).sqrt(), det)
        }
        _ => {
            let mat = DMatrix::from_row_slice(d, d, m);
            (crate::affine::operator_norm(&mat), mat.determinant())
        }
    }
}

/// Deterministic unit directions: `+-1` in d = 1, equally spaced angles in
/// d = 2, seeded uniform samples otherwise.
pub fn sphere_directions(d: usize, count: usize) -> Vec<Vec<f64>> {
    match d {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..count.max(1))
            .map(|j| {
                let a = 2.0 * PI * j as f64 / count.max(1) as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
            let mut out = Vec::with_capacity(count);
            while out.len() < count {
                let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let n = v.iter().map(|c| c * c).sum::<f64>().sqrt();
                if n > 1e-3 && n <= 1.0 {
                    out.push(v.iter().map(|c| c / n).collect());
                }
            }
            out
        }
    }
}

/// Log-polar samples of the ball of radius `r_hat` around `p`, dense across
/// the blend annulus, including the centre and both blend radii.
pub fn ball_samples(
    d: usize,
    r_check: f64,
    r_hat: f64,
    radii: usize,
    directions: usize,
) -> Vec<Vec<f64>> {
    let lo = 0.25 * r_check;
    let n = radii.max(2);
    let mut rs: Vec<f64> = (0..n)
        .map(|i| lo * (r_hat / lo).powf(i as f64 / (n - 1) as f64))
        .collect();
    rs.extend([r_check, r_check * (1.0 + 1e-9), r_hat * (1.0 - 1e-9)]);
    let dirs = sphere_directions(d, directions);
    let mut out = vec![vec![0.5; d]];
    for r in rs {
        for dir in &dirs {
            out.push(dir.iter().map(|v| 0.5 + r * v).collect());
        }
    }
    out
}

/// Uniform grid of the torus with about `target` points, including `x = 0`
/// (the maximum of `H`) and `x = p`.
pub fn torus_grid(d: usize, target: usize) -> Vec<Vec<f64>> {
    let mut per_axis = (target as f64).powf(1.0 / d as f64).ceil() as usize;
    if per_axis % 2 == 1 {
        per_axis += 1;
    }
    let total = per_axis.pow(d as u32);
    (0..total)
        .map(|mut idx| {
            (0..d)
                .map(|_| {
                    let c = idx % per_axis;
                    idx /= per_axis;
                    c as f64 / per_axis as f64
                })
                .collect()
        })
        .collect()
}

/// Pass/fail with the measured quantity and its slack.
#[derive(Clone, Debug, Serialize)]
pub struct CheckItem {
    pub passed: bool,
    pub value: f64,
    pub margin: f64,
}

impl CheckItem {
    fn below(value: f64, bound: f64) -> Self {
        Self {
            passed: value < bound,
            value,
            margin: bound - value,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CoveringItem {
    pub passed: bool,
    pub certificate: CoverCertificate,
}

/// Outcome of [`verify_fiber_arc`].
#[derive(Clone, Debug, Serialize)]
pub struct FiberReport {
    /// Largest image radius of the boundary of `A_hat` against `r_hat`.
    pub trapping: CheckItem,
    /// `sup |Df_t|` on `A_hat` against 1.
    pub contraction: CheckItem,
    /// C¹ distance to the identity against `epsilon`.
    pub c1_closeness: CheckItem,
    pub covering: CoveringItem,
    /// `sup |Df_t|` on `A_check`.
    pub lambda_check: f64,
    pub min_jacobian_det: f64,
    pub diffeomorphism: bool,
    pub samples: usize,
    pub epsilon: f64,
    pub k: u32,
    pub tau: f64,
    pub scale: f64,
    pub r_hat: f64,
    pub r_check: f64,
}

impl FiberReport {
    pub fn items(&self) -> [bool; 4] {
        [
            self.trapping.passed,
            self.contraction.passed,
            self.c1_closeness.passed,
            self.covering.passed,
        ]
    }
}

#[derive(Clone, Copy)]
struct SampleStats {
    norm_hat: f64,
    norm_check: f64,
    displacement: f64,
    derivative_gap: f64,
    min_det: f64,
}

impl SampleStats {
    fn empty() -> Self {
        Self {
            norm_hat: 0.0,
            norm_check: 0.0,
            displacement: 0.0,
            derivative_gap: 0.0,
            min_det: f64::INFINITY,
        }
    }

    fn merge(self, o: Self) -> Self {
        Self {
            norm_hat: self.norm_hat.max(o.norm_hat),
            norm_check: self.norm_check.max(o.norm_check),
            displacement: self.displacement.max(o.displacement),
            derivative_gap: self.derivative_gap.max(o.derivative_gap),
            min_det: self.min_det.min(o.min_det),
        }
    }
}

/// Checks trapping, contraction, C¹ closeness and covering of the arc on a
/// `(t, x)` grid: eleven `t` values, about `10^4` torus grid points plus
/// `grid_density^2` log-polar samples of `A_hat`.
pub fn verify_fiber_arc(arc: &FiberArc, epsilon: f64, grid_density: usize) -> FiberReport {
    let d = arc.d;
    let mut samples = torus_grid(d, 10_000);
    samples.extend(ball_samples(
        d,
        arc.r_check,
        arc.r_hat,
        grid_density,
        grid_density,
    ));
    let stats = samples
        .par_iter()
        .map(|x| {
            let mut st = SampleStats::empty();
            let mut out = [0.0; MAX_FIBER_DIM];
            let mut jac = vec![0.0; d * d];
            let r = arc.radius_of(x);
            for i in 0..=10 {
                let t = i as f64 / 10.0;
                arc.eval_into(t, x, &mut out[..d]);
                arc.jacobian_into(t, x, &mut jac);
                let (norm, det) = norm_and_det(&jac, d);
                let disp = out[..d]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| torus_delta(*a, *b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                for j in 0..d {
                    jac[j * d + j] -= 1.0;
                }
                let gap = norm_and_det(&jac, d).0;
                st.displacement = st.displacement.max(disp);
                st.derivative_gap = st.derivative_gap.max(gap);
                st.min_det = st.min_det.min(det);
                if r <= arc.r_hat {
                    st.norm_hat = st.norm_hat.max(norm);
                }
                if r <= arc.r_check {
                    st.norm_check = st.norm_check.max(norm);
                }
            }
            st
        })
        .reduce(SampleStats::empty, SampleStats::merge);

    let trap = arc.trap_margin(8 * grid_density);
    let pieces = arc
        .region_box
        .region
        .mapped(&arc.e_box[0])
        .and_then(|a| a.union(&arc.region_box.region.mapped(&arc.e_box[1])?))
        .expect("same dimension");
    let margin = 0.5 * arc.region_box.shrink;
    let certificate = certify_region_covered(&arc.region_box.region, &pieces, margin.max(1e-9), 30);
    FiberReport {
        trapping: CheckItem {
            passed: trap > 0.0,
            value: arc.r_hat - trap,
            margin: trap,
        },
        contraction: CheckItem::below(stats.norm_hat, 1.0),
        c1_closeness: CheckItem::below(stats.displacement + stats.derivative_gap, epsilon),
        covering: CoveringItem {
            passed: certificate.covered,
            certificate,
        },
        lambda_check: stats.norm_check,
        min_jacobian_det: stats.min_det,
        diffeomorphism: stats.min_det > 0.0,
        samples: samples.len() * 11,
        epsilon,
        k: arc.k,
        tau: arc.tau,
        scale: arc.scale,
        r_hat: arc.r_hat,
        r_check: arc.r_check,
    }
}
