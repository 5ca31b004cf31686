use serde::Serialize;

use crate::fiber::{sphere_directions, MAX_FIBER_DIM};
use crate::system::{DynamicalSystem, State};

/// Strict invariance of `D = S^1 x A_hat` (times the disk for solenoids).
#[derive(Clone, Debug, Serialize)]
pub struct TrappingReport {
    pub passed: bool,
    /// Smallest distance from an image of a boundary sample to the boundary.
    pub margin: f64,
    pub fiber_margin: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub disk_margin: Option<f64>,
    pub samples: usize,
}

/// Maps `phi_samples x directions` points of `S^1 x boundary(A_hat)` forward
/// once and measures how far inside `A_hat` they land.
pub fn trapping_check(
    system: &DynamicalSystem,
    phi_samples: usize,
    directions: usize,
) -> TrappingReport {
    let fiber = system.fiber();
    let d = fiber.dim();
    let dirs = sphere_directions(d, directions);
    let mut worst = 0.0f64;
    let mut x = [0.5; MAX_FIBER_DIM];
    for i in 0..phi_samples {
        let phi = i as f64 / phi_samples as f64;
        for dir in &dirs {
            for j in 0..d {
                x[j] = 0.5 + fiber.r_hat() * dir[j];
            }
            let next = system.step(&State::new(phi, &x[..d]));
            worst = worst.max(fiber.radius_of(&next.x[..d]));
        }
    }
    let fiber_margin = fiber.r_hat() - worst;
    // |e^{2 pi i phi} + alpha z| <= 1 + alpha R on the whole disk.
    let disk_margin = match system {
        DynamicalSystem::Solenoid(s) => Some(s.radius() - 1.0 - s.alpha() * s.radius()),
        _ => None,
    };
    let margin = disk_margin.map_or(fiber_margin, |m| m.min(fiber_margin));
    TrappingReport {
        passed: margin > 0.0,
        margin,
        fiber_margin,
        disk_margin,
        samples: phi_samples * dirs.len(),
    }
}
