//! Dynamical verification of the constructed systems.
//!
//! Every Monte-Carlo routine draws from one master seed; start `i` uses the
//! ChaCha stream `i`, so runs are reproducible and independent of thread count.

pub mod birkhoff;
pub mod density;
pub mod graph;
pub mod lyapunov;
pub mod occupancy;
pub mod trapping;
pub mod verdict;

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fiber::{FiberArc, MAX_FIBER_DIM};
use crate::system::{DynamicalSystem, State};

pub use birkhoff::{birkhoff_average, srb_consistency, SrbReport, TestFunction};
pub use density::{density_certificate, DensityReport};
pub use graph::{graph_contraction_test, GraphReport};
pub use lyapunov::{lyapunov_spectrum, LyapunovReport};
pub use occupancy::{
    interior_occupancy, occupancy_run, InteriorReport, OccupancyGrid, OccupancyOptions,
};
pub use trapping::{trapping_check, TrappingReport};
pub use verdict::{massive_attractor_report, LabSettings, MassiveReport};

/// The RNG of start `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform point of the ball of radius `radius` about `p`, by rejection.
pub fn sample_ball(rng: &mut ChaCha8Rng, d: usize, radius: f64) -> [f64; MAX_FIBER_DIM] {
    let mut x = [0.5; MAX_FIBER_DIM];
    loop {
        let mut norm = 0.0;
        let mut v = [0.0; MAX_FIBER_DIM];
        for c in v.iter_mut().take(d) {
            *c = rng.gen_range(-1.0..1.0);
            norm += *c * *c;
        }
        if norm <= 1.0 {
            for i in 0..d {
                x[i] = 0.5 + radius * v[i];
            }
            return x;
        }
    }
}

/// A start uniform in `S^1 x A_hat` (and in the disk for solenoids). The
/// `(phi, x)` draws come first, so the projection of a solenoid start equals
/// the skew-product start drawn from the same stream.
pub fn sample_start(system: &DynamicalSystem, rng: &mut ChaCha8Rng) -> State {
    let fiber = system.fiber();
    let d = fiber.dim();
    let phi = rng.gen_range(0.0..1.0);
    let x = sample_ball(rng, d, fiber.r_hat());
    let mut state = State::new(phi, &x[..d]);
    if let DynamicalSystem::Solenoid(s) = system {
        let r = s.radius() * rng.gen_range(0.0f64..1.0).sqrt();
        let a = rng.gen_range(0.0..2.0 * PI);
        state.z = [r * a.cos(), r * a.sin()];
    }
    state
}

/// `sup |Df_t|` over samples of `A_check` and eleven `t` values.
pub fn lambda_eff(fiber: &FiberArc) -> f64 {
    let d = fiber.dim();
    let mut jac = [0.0; MAX_FIBER_DIM * MAX_FIBER_DIM];
    let mut best = 0.0f64;
    let samples = crate::fiber::ball_samples(d, fiber.r_check(), fiber.r_check(), 8, 16);
    for x in samples
        .iter()
        .filter(|x| fiber.radius_of(x) <= fiber.r_check())
    {
        for i in 0..=10 {
            fiber.jacobian_into(i as f64 / 10.0, x, &mut jac[..d * d]);
            best = best.max(crate::fiber::norm_and_det(&jac[..d * d], d).0);
        }
    }
    best
}

/// Two-term compensated (Neumaier) sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}
