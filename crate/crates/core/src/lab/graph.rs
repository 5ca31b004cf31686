use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fiber::{torus_delta, MAX_FIBER_DIM};
use crate::lab::{lambda_eff, sample_ball, stream_rng};
use crate::system::{PhaseMap, SolenoidSystem};

/// Relative slack on the contraction bound, for rounding.
pub const GRAPH_RELATIVE_SLACK: f64 = 1e-6;

/// How strongly long backward fiber compositions collapse pairs of points.
#[derive(Clone, Debug, Serialize)]
pub struct GraphReport {
    pub passed: bool,
    pub word_length: u32,
    pub trials: usize,
    pub max_ratio: f64,
    /// `lambda_eff^n`.
    pub bound: f64,
    pub lambda_eff: f64,
    /// Trials whose ratio exceeded `bound * (1 + GRAPH_RELATIVE_SLACK)`.
    pub violations: usize,
}

/// For random end phases and random backward chains (any of the `m`
/// preimages at each step), composes the `n` fiber maps along the chain and
/// compares two seeds drawn in `A_check`. Pass iff every ratio
/// `|F x - F y| / |x - y|` is within `lambda_eff^n (1 + GRAPH_RELATIVE_SLACK)`.
pub fn graph_contraction_test(
    system: &SolenoidSystem,
    word_length: u32,
    trials: usize,
    seed: u64,
) -> Result<GraphReport> {
    let skew = match system.base() {
        PhaseMap::Skew(s) => s,
        PhaseMap::Endo(_) => {
            return Err(Error::Usage(
                "graph test needs fiber maps that depend on the base angle only".into(),
            ))
        }
    };
    let fiber = skew.fiber();
    let d = fiber.dim();
    let m = skew.m();
    let lambda = lambda_eff(fiber);
    let bound = lambda.powi(word_length as i32);
    let limit = bound * (1.0 + GRAPH_RELATIVE_SLACK);
    let ratios: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = stream_rng(seed, trial as u64);
            let mut chain = Vec::with_capacity(word_length as usize);
            let mut phi: f64 = rng.gen_range(0.0..1.0);
            for _ in 0..word_length {
                phi = (phi + rng.gen_range(0..m) as f64) / m as f64;
                chain.push(phi);
            }
            let mut x = sample_ball(&mut rng, d, fiber.r_check());
            let mut y = sample_ball(&mut rng, d, fiber.r_check());
            pair_ratio(skew, &chain, &mut x, &mut y, d)
        })
        .collect();
    let max_ratio = ratios.iter().copied().fold(0.0, f64::max);
    let violations = ratios.iter().filter(|&&r| r > limit).count();
    Ok(GraphReport {
        passed: violations == 0,
        word_length,
        trials,
        max_ratio,
        bound,
        lambda_eff: lambda,
        violations,
    })
}

/// Ratio of distances after composing the fiber maps along `chain`, innermost
/// last. Coincident seeds give 0.
fn pair_ratio(
    skew: &crate::system::SkewSystem,
    chain: &[f64],
    x: &mut [f64; MAX_FIBER_DIM],
    y: &mut [f64; MAX_FIBER_DIM],
    d: usize,
) -> f64 {
    let dist = |a: &[f64; MAX_FIBER_DIM], b: &[f64; MAX_FIBER_DIM]| {
        (0..d)
            .map(|i| torus_delta(a[i], b[i]).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let before = dist(x, y);
    if before == 0.0 {
        return 0.0;
    }
    let mut buf = [0.0; MAX_FIBER_DIM];
    for &phase in chain.iter().rev() {
        skew.fiber_map(phase, &x[..d], &mut buf[..d]);
        *x = buf;
        skew.fiber_map(phase, &y[..d], &mut buf[..d]);
        *y = buf;
    }
    dist(x, y) / before
}
