use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lab::{sample_start, stream_rng, CompensatedSum};
use crate::system::{DynamicalSystem, State};

/// Shortest admissible averaging window.
pub const MIN_BIRKHOFF_STEPS: u64 = 10_000;

/// Observables averaged along orbits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFunction {
    One,
    CosPhi,
    /// First fiber chart coordinate.
    FirstFiber,
    SinPhiCosX1,
}

impl TestFunction {
    /// The three observables of the consistency run.
    pub const STANDARD: [TestFunction; 3] = [
        TestFunction::CosPhi,
        TestFunction::FirstFiber,
        TestFunction::SinPhiCosX1,
    ];

    pub fn eval(self, s: &State) -> f64 {
        match self {
            TestFunction::One => 1.0,
            TestFunction::CosPhi => (2.0 * PI * s.phi).cos(),
            TestFunction::FirstFiber => s.x[0],
            TestFunction::SinPhiCosX1 => (2.0 * PI * s.phi).sin() * (2.0 * PI * s.x[0]).cos(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TestFunction::One => "one",
            TestFunction::CosPhi => "cos_phi",
            TestFunction::FirstFiber => "x1",
            TestFunction::SinPhiCosX1 => "sin_phi_cos_x1",
        }
    }
}

fn averages(
    system: &DynamicalSystem,
    fns: &[TestFunction],
    start: State,
    steps: u64,
    burn_in: u64,
) -> Vec<f64> {
    let mut s = start;
    for _ in 0..burn_in {
        s = system.step(&s);
    }
    let mut sums = vec![CompensatedSum::default(); fns.len()];
    for _ in 0..steps {
        s = system.step(&s);
        for (acc, f) in sums.iter_mut().zip(fns) {
            acc.add(f.eval(&s));
        }
    }
    sums.iter().map(|a| a.value() / steps as f64).collect()
}

/// Mean of `psi` over `steps` iterates following `burn_in` discarded ones.
pub fn birkhoff_average(
    system: &DynamicalSystem,
    psi: TestFunction,
    start: State,
    steps: u64,
    burn_in: u64,
) -> Result<f64> {
    if steps < MIN_BIRKHOFF_STEPS {
        return Err(Error::Usage(format!(
            "Birkhoff averages need at least {MIN_BIRKHOFF_STEPS} steps"
        )));
    }
    Ok(averages(system, &[psi], start, steps, burn_in)[0])
}

/// Agreement of time averages across random starts.
#[derive(Clone, Debug, Serialize)]
pub struct SrbReport {
    pub passed: bool,
    pub starts: usize,
    pub steps: u64,
    pub functions: Vec<TestFunction>,
    /// `averages[f][s]`: function `f` along start `s`.
    pub averages: Vec<Vec<f64>>,
    /// Max pairwise deviation per function.
    pub deviations: Vec<f64>,
    pub max_deviation: f64,
    pub deviation_tolerance: f64,
    /// Mean over starts of the `cos 2 pi phi` average, when requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cos_phi_mean: Option<f64>,
    pub cos_phi_tolerance: f64,
}

/// Runs `starts` orbits from uniform starts in `D` and compares the time
/// averages of `fns`. Pass iff every pairwise deviation is at most
/// `deviation_tolerance` and the `cos 2 pi phi` mean (if present) is within
/// `cos_phi_tolerance` of zero.
#[allow(clippy::too_many_arguments)]
pub fn srb_consistency(
    system: &DynamicalSystem,
    fns: &[TestFunction],
    starts: usize,
    steps: u64,
    burn_in: u64,
    seed: u64,
    deviation_tolerance: f64,
    cos_phi_tolerance: f64,
) -> Result<SrbReport> {
    if steps < MIN_BIRKHOFF_STEPS {
        return Err(Error::Usage(format!(
            "Birkhoff averages need at least {MIN_BIRKHOFF_STEPS} steps"
        )));
    }
    if starts < 2 {
        return Err(Error::Usage("consistency needs at least two starts".into()));
    }
    let per_start: Vec<Vec<f64>> = (0..starts)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let start = sample_start(system, &mut rng);
            averages(system, fns, start, steps, burn_in)
        })
        .collect();
    let averages: Vec<Vec<f64>> = (0..fns.len())
        .map(|f| per_start.iter().map(|row| row[f]).collect())
        .collect();
    let deviations: Vec<f64> = averages
        .iter()
        .map(|row| {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = row.iter().copied().fold(f64::INFINITY, f64::min);
            max - min
        })
        .collect();
    let max_deviation = deviations.iter().copied().fold(0.0, f64::max);
    let cos_phi_mean = fns
        .iter()
        .position(|&f| f == TestFunction::CosPhi)
        .map(|f| averages[f].iter().sum::<f64>() / starts as f64);
    let passed = max_deviation <= deviation_tolerance
        && cos_phi_mean.is_none_or(|c| c.abs() <= cos_phi_tolerance);
    Ok(SrbReport {
        passed,
        starts,
        steps,
        functions: fns.to_vec(),
        averages,
        deviations,
        max_deviation,
        deviation_tolerance,
        cos_phi_mean,
        cos_phi_tolerance,
    })
}
