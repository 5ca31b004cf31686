use serde::Serialize;

use crate::error::Result;
use crate::lab::{
    density_certificate, graph_contraction_test, interior_occupancy, occupancy_run,
    srb_consistency, trapping_check, DensityReport, GraphReport, InteriorReport, OccupancyGrid,
    OccupancyOptions, SrbReport, TestFunction, TrappingReport,
};
use crate::system::{DynamicalSystem, PhaseMap, SolenoidSystem, SOLENOID_ALPHA, SOLENOID_RADIUS};

/// Sizes and tolerances of the verdict pipeline.
#[derive(Clone, Debug, Serialize)]
pub struct LabSettings {
    pub seed: u64,
    pub trap_phi_samples: usize,
    pub trap_directions: usize,
    pub occupancy_starts: usize,
    pub occupancy_steps: u64,
    pub occupancy_burn_in: u64,
    /// `[n_phi, n_x1, ...]`; empty means 256 x 128 in `d = 1` and
    /// 64 x 64^d otherwise.
    pub occupancy_dims: Vec<usize>,
    /// Factor applied to `A` before the interior test (1 for the skew
    /// product, below 1 for perturbations).
    pub region_scale: f64,
    pub srb_starts: usize,
    pub srb_steps: u64,
    pub srb_burn_in: u64,
    pub srb_tolerance: f64,
    pub cos_phi_tolerance: f64,
    pub density_phis: Vec<f64>,
    pub density_depth: u32,
    pub graph_length: u32,
    pub graph_trials: usize,
}

impl Default for LabSettings {
    fn default() -> Self {
        Self {
            seed: 1,
            trap_phi_samples: 256,
            trap_directions: 64,
            occupancy_starts: 100,
            occupancy_steps: 100_000,
            occupancy_burn_in: 1_000,
            occupancy_dims: Vec::new(),
            region_scale: 1.0,
            srb_starts: 10,
            srb_steps: 1_000_000,
            srb_burn_in: 1_000,
            srb_tolerance: 1e-2,
            cos_phi_tolerance: 3e-3,
            density_phis: vec![0.0, 0.37, 0.71],
            density_depth: 16,
            graph_length: 50,
            graph_trials: 1_000,
        }
    }
}

impl LabSettings {
    pub fn grid_dims(&self, d: usize) -> Vec<usize> {
        if !self.occupancy_dims.is_empty() {
            return self.occupancy_dims.clone();
        }
        if d == 1 {
            vec![256, 128]
        } else {
            std::iter::once(64)
                .chain(std::iter::repeat_n(64, d))
                .collect()
        }
    }

    pub fn occupancy_options(&self, d: usize) -> OccupancyOptions {
        OccupancyOptions {
            starts: self.occupancy_starts,
            steps: self.occupancy_steps,
            burn_in: self.occupancy_burn_in,
            dims: self.grid_dims(d),
            seed: self.seed,
            window: None,
        }
    }
}

/// All checks behind the "massive attractor" verdict.
#[derive(Clone, Debug, Serialize)]
pub struct MassiveReport {
    pub massive: bool,
    pub trapping: TrappingReport,
    pub occupancy: OccupancyGrid,
    pub interior: InteriorReport,
    pub srb: SrbReport,
    /// Absent for non-skew systems, whose fibers are not mapped fiberwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub density: Option<Vec<DensityReport>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub graph: Option<GraphReport>,
    /// Names of the failed checks.
    pub failures: Vec<String>,
}

/// Trapping, interior occupancy, SRB consistency and, for skew-product
/// dynamics, the density certificates and the graph test. `massive` is the
/// conjunction of every check that ran.
pub fn massive_attractor_report(
    system: &DynamicalSystem,
    settings: &LabSettings,
) -> Result<MassiveReport> {
    let fiber = system.fiber();
    let d = fiber.dim();
    let mut failures = Vec::new();

    let trapping = trapping_check(system, settings.trap_phi_samples, settings.trap_directions);
    if !trapping.passed {
        failures.push("trapping".to_string());
    }

    let occupancy = occupancy_run(system, &settings.occupancy_options(d))?;
    let region = if settings.region_scale == 1.0 {
        fiber.region().clone()
    } else {
        fiber.region().scaled(settings.region_scale)
    };
    let interior = interior_occupancy(&occupancy, &region)?;
    if !interior.passed {
        failures.push("interior_occupancy".to_string());
    }

    let srb = srb_consistency(
        system,
        &TestFunction::STANDARD,
        settings.srb_starts,
        settings.srb_steps,
        settings.srb_burn_in,
        settings.seed,
        settings.srb_tolerance,
        settings.cos_phi_tolerance,
    )?;
    if !srb.passed {
        failures.push("srb_consistency".to_string());
    }

    let (density, graph) = if system.is_skew() {
        let skew = system.phase_skew();
        let seed_point: Vec<f64> = fiber.region().pieces()[0]
            .center()
            .iter()
            .copied()
            .collect();
        let mut reports = Vec::new();
        for &phi in &settings.density_phis {
            let report = density_certificate(
                skew,
                phi,
                settings.density_depth,
                &seed_point,
                settings.seed,
            )?;
            if !report.passed {
                failures.push(format!("density(phi={phi})"));
            }
            reports.push(report);
        }
        let solenoid = match system {
            DynamicalSystem::Solenoid(s) => s.clone(),
            _ => SolenoidSystem::new(
                PhaseMap::Skew(skew.clone()),
                SOLENOID_RADIUS,
                SOLENOID_ALPHA,
            )?,
        };
        let graph = graph_contraction_test(
            &solenoid,
            settings.graph_length,
            settings.graph_trials,
            settings.seed,
        )?;
        if !graph.passed {
            failures.push("graph".to_string());
        }
        (Some(reports), Some(graph))
    } else {
        (None, None)
    };

    Ok(MassiveReport {
        massive: failures.is_empty(),
        trapping,
        occupancy,
        interior,
        srb,
        density,
        graph,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fiber::{FiberArc, FiberParams};
    use crate::system::{CircleArcPair, SkewSystem};
    use std::sync::Arc;

    fn small_settings() -> LabSettings {
        LabSettings {
            trap_phi_samples: 32,
            trap_directions: 8,
            occupancy_starts: 8,
            occupancy_steps: 20_000,
            occupancy_dims: vec![32, 128],
            srb_starts: 3,
            srb_steps: 50_000,
            srb_tolerance: 3e-2,
            cos_phi_tolerance: 2e-2,
            density_phis: vec![0.37],
            density_depth: 10,
            graph_length: 20,
            graph_trials: 50,
            ..LabSettings::default()
        }
    }

    #[test]
    fn fast_skew_is_massive() {
        let fiber = FiberArc::build(&FiberParams::new(1, 0.9, 0.2, 0.025)).unwrap();
        let sys = DynamicalSystem::Skew(SkewSystem::new(
            CircleArcPair::standard(3).unwrap(),
            Arc::new(fiber),
        ));
        let report = massive_attractor_report(&sys, &small_settings()).unwrap();
        assert!(
            report.massive,
            "{:?} {:?}",
            report.failures, report.interior
        );
        assert!(report.density.is_some() && report.graph.is_some());
    }

    #[test]
    fn identity_fibers_are_not_massive() {
        let fiber = FiberArc::identity(1, 0.2, 0.025).unwrap();
        let sys = DynamicalSystem::Skew(SkewSystem::new(
            CircleArcPair::standard(3).unwrap(),
            Arc::new(fiber),
        ));
        let settings = LabSettings {
            density_phis: vec![],
            ..small_settings()
        };
        let report = massive_attractor_report(&sys, &settings).unwrap();
        assert!(!report.massive);
        assert!(report.failures.contains(&"trapping".to_string()));
    }
}
