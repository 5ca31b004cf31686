//! Command driver: builds the systems from a [`RunConfig`], runs the
//! requested checks and writes the output files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::config::{RunConfig, SystemKind};
use crate::error::{Error, Result};
use crate::fiber::{verify_fiber_arc, FiberArc};
use crate::lab::{
    density::write_density_csv, density_certificate, interior_occupancy, lyapunov_spectrum,
    massive_attractor_report, occupancy_run, sample_start, srb_consistency, stream_rng,
    trapping_check, DensityReport, OccupancyGrid, TestFunction,
};
use crate::system::{
    covering_degree_check, mdsc_check, CircleArcPair, DynamicalSystem, EndoSystem, PhaseMap,
    SkewSystem, SolenoidSystem,
};

/// Format version of `report.json`.
pub const REPORT_FORMAT: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Construct,
    Certify,
    Simulate,
    Density,
    Lyapunov,
    Srb,
    Perturb,
    All,
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "construct" => Command::Construct,
            "certify" => Command::Certify,
            "simulate" => Command::Simulate,
            "density" => Command::Density,
            "lyapunov" => Command::Lyapunov,
            "srb" => Command::Srb,
            "perturb" => Command::Perturb,
            "all" => Command::All,
            other => return Err(Error::Usage(format!("unknown command {other:?}"))),
        })
    }
}

/// What a run produced.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub all_passed: bool,
    pub failures: Vec<String>,
    pub report: Value,
    pub files: Vec<PathBuf>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.all_passed {
            0
        } else {
            1
        }
    }
}

/// Collects sections, failures and written files.
struct Session<'a> {
    cfg: &'a RunConfig,
    out: &'a Path,
    sections: Map<String, Value>,
    failures: Vec<String>,
    files: Vec<PathBuf>,
}

impl Session<'_> {
    fn section<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.sections
            .insert(name.to_string(), serde_json::to_value(value)?);
        Ok(())
    }

    fn require(&mut self, passed: bool, name: &str) {
        if !passed {
            self.failures.push(name.to_string());
        }
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.out.join(name);
        let file = File::create(&path)?;
        self.files.push(path);
        Ok(BufWriter::new(file))
    }

    fn write_grid(&mut self, name: &str, grid: &OccupancyGrid) -> Result<()> {
        let mut w = self.create(name)?;
        grid.write_ogrid(&mut w)?;
        w.flush()?;
        Ok(())
    }

    fn skew(&self, fiber: &Arc<FiberArc>) -> Result<SkewSystem> {
        Ok(SkewSystem::new(
            CircleArcPair::standard(self.cfg.m)?,
            Arc::clone(fiber),
        ))
    }

    fn system(&self, fiber: &Arc<FiberArc>) -> Result<DynamicalSystem> {
        let skew = self.skew(fiber)?;
        Ok(match self.cfg.system {
            SystemKind::Skew => DynamicalSystem::Skew(skew),
            SystemKind::Solenoid => DynamicalSystem::Solenoid(SolenoidSystem::new(
                PhaseMap::Skew(skew),
                self.cfg.solenoid_radius,
                self.cfg.solenoid_alpha,
            )?),
        })
    }

    fn construct(&mut self, fiber: &FiberArc) -> Result<()> {
        let region = fiber.region_box();
        let steps_covered = region.step_certificates.iter().all(|c| c.covered);
        let spec = fiber.box_spec();
        let section = json!({
            "k": fiber.k(),
            "tau": fiber.tau(),
            "tau_candidates": fiber.flow_time_candidates_tried(),
            "scale": fiber.scale(),
            "contraction_rate": fiber.contraction_rate(),
            "box_spec": spec,
            "box_margins": spec.margins(),
            "region_pieces": region.region.len(),
            "shrink": region.shrink,
            "step_certificates_covered": steps_covered,
            "step_certificates": region.step_certificates,
            "final_certificate": region.final_certificate,
        });
        self.section("construct", &section)?;
        self.require(steps_covered, "construct.step_coverings");
        self.require(region.final_certificate.covered, "construct.final_covering");
        Ok(())
    }

    fn certify(&mut self, fiber: &Arc<FiberArc>) -> Result<()> {
        let report = verify_fiber_arc(fiber, self.cfg.epsilon, self.cfg.verify_grid);
        self.require(report.trapping.passed, "certify.trapping");
        self.require(report.contraction.passed, "certify.contraction");
        if self.cfg.enforce_epsilon {
            self.require(report.c1_closeness.passed, "certify.c1_closeness");
        }
        self.require(report.covering.passed, "certify.covering");
        self.section(
            "certify",
            &json!({
                "fiber": report,
                "items": report.items(),
                "c1_closeness_required": self.cfg.enforce_epsilon,
            }),
        )?;
        let mdsc = mdsc_check(
            &self.skew(fiber)?,
            self.cfg.mdsc_phi_samples,
            self.cfg.mdsc_x_samples,
        )?;
        self.require(mdsc.passed, "certify.mdsc");
        self.section("mdsc", &mdsc)
    }

    fn simulate(&mut self, system: &DynamicalSystem) -> Result<()> {
        let lab = &self.cfg.lab;
        let trapping = trapping_check(system, lab.trap_phi_samples, lab.trap_directions);
        let grid = occupancy_run(system, &lab.occupancy_options(system.fiber_dim()))?;
        let region = system.fiber().region().scaled(lab.region_scale);
        let interior = interior_occupancy(&grid, &region)?;
        self.require(trapping.passed, "simulate.trapping");
        self.require(interior.passed, "simulate.interior_occupancy");
        self.write_grid("occupancy.ogrid", &grid)?;
        self.section(
            "simulate",
            &json!({ "trapping": trapping, "occupancy": grid, "interior": interior }),
        )
    }

    fn density(&mut self, fiber: &Arc<FiberArc>) -> Result<()> {
        let skew = self.skew(fiber)?;
        let lab = &self.cfg.lab;
        let seed_point: Vec<f64> = fiber.region().pieces()[0]
            .center()
            .iter()
            .copied()
            .collect();
        let mut reports = Vec::new();
        for &phi in &lab.density_phis {
            reports.push(density_certificate(
                &skew,
                phi,
                lab.density_depth,
                &seed_point,
                lab.seed,
            )?);
        }
        self.record_density(&reports)?;
        self.section("density", &reports)
    }

    fn record_density(&mut self, reports: &[DensityReport]) -> Result<()> {
        for r in reports {
            self.require(r.passed, &format!("density.phi={}", r.phi));
        }
        self.write_density(reports)
    }

    fn write_density(&mut self, reports: &[DensityReport]) -> Result<()> {
        let mut w = self.create("density.csv")?;
        write_density_csv(reports, &mut w)?;
        w.flush()?;
        Ok(())
    }

    fn lyapunov(&mut self, system: &DynamicalSystem) -> Result<()> {
        let mut rng = stream_rng(self.cfg.lab.seed, 0);
        let start = sample_start(system, &mut rng);
        let report = lyapunov_spectrum(system, start, self.cfg.lyapunov_steps)?;
        let fiber_bound = system.fiber().contraction_rate().ln() + self.cfg.lyapunov_tolerance;
        let base_error = (report.base_exponent - (system.m() as f64).ln()).abs();
        let fiber_ok = report.fiber_exponents.iter().all(|&e| e <= fiber_bound);
        if system.is_skew() {
            self.require(base_error <= 1e-6, "lyapunov.base_exponent");
        }
        self.require(fiber_ok, "lyapunov.fiber_exponents");
        self.require(report.trace_gap <= 1e-3, "lyapunov.trace_consistency");

        let mut w = self.create("lyapunov.csv")?;
        writeln!(w, "kind,index,exponent")?;
        for (i, e) in report.exponents.iter().enumerate() {
            writeln!(w, "spectrum,{i},{e:.17e}")?;
        }
        for (i, e) in report.fiber_exponents.iter().enumerate() {
            writeln!(w, "fiber,{i},{e:.17e}")?;
        }
        writeln!(w, "base,0,{:.17e}", report.base_exponent)?;
        w.flush()?;
        self.section(
            "lyapunov",
            &json!({
                "report": report,
                "base_exponent_error": base_error,
                "fiber_exponent_bound": fiber_bound,
            }),
        )
    }

    fn srb(&mut self, system: &DynamicalSystem) -> Result<()> {
        let lab = &self.cfg.lab;
        let report = srb_consistency(
            system,
            &TestFunction::STANDARD,
            lab.srb_starts,
            lab.srb_steps,
            lab.srb_burn_in,
            lab.seed,
            lab.srb_tolerance,
            lab.cos_phi_tolerance,
        )?;
        self.require(report.passed, "srb.consistency");
        self.section("srb", &report)
    }

    fn perturb(&mut self, fiber: &Arc<FiberArc>, grid_name: &str) -> Result<()> {
        let cfg = self.cfg;
        let endo = EndoSystem::new(self.skew(fiber)?, cfg.eps1, cfg.eps2)?;
        let degree = covering_degree_check(&endo, cfg.degree_phi_samples, cfg.degree_x_samples);
        let system = DynamicalSystem::Endo(endo);
        let trapping = trapping_check(&system, cfg.lab.trap_phi_samples, cfg.lab.trap_directions);
        let grid = occupancy_run(&system, &cfg.lab.occupancy_options(cfg.d))?;
        let region = fiber.region().scaled(cfg.perturb_region_scale);
        let interior = interior_occupancy(&grid, &region)?;
        self.require(degree.passed, "perturb.covering_degree");
        self.require(trapping.passed, "perturb.trapping");
        self.require(interior.passed, "perturb.interior_occupancy");
        self.write_grid(grid_name, &grid)?;
        self.section(
            "perturb",
            &json!({
                "eps1": cfg.eps1,
                "eps2": cfg.eps2,
                "region_scale": cfg.perturb_region_scale,
                "covering_degree": degree,
                "trapping": trapping,
                "occupancy": grid,
                "interior": interior,
            }),
        )
    }

    fn massive(&mut self, system: &DynamicalSystem) -> Result<()> {
        let report = massive_attractor_report(system, &self.cfg.lab)?;
        for f in &report.failures {
            self.failures.push(format!("massive.{f}"));
        }
        self.write_grid("occupancy.ogrid", &report.occupancy)?;
        if let Some(density) = &report.density {
            self.write_density(density)?;
        }
        self.section("massive", &report)
    }
}

/// Runs `command` and writes `report.json` plus the command's data files into
/// `out`. Check failures are reported in the outcome, not as errors; errors
/// are reserved for I/O and invalid input.
pub fn run(command: Command, cfg: &RunConfig, out: &Path) -> Result<RunOutcome> {
    std::fs::create_dir_all(out)?;
    let mut s = Session {
        cfg,
        out,
        sections: Map::new(),
        failures: Vec::new(),
        files: Vec::new(),
    };
    match FiberArc::build(&cfg.fiber_params()) {
        Ok(fiber) => {
            let fiber = Arc::new(fiber);
            let system = s.system(&fiber)?;
            match command {
                Command::Construct => s.construct(&fiber)?,
                Command::Certify => {
                    s.construct(&fiber)?;
                    s.certify(&fiber)?;
                }
                Command::Simulate => s.simulate(&system)?,
                Command::Density => s.density(&fiber)?,
                Command::Lyapunov => s.lyapunov(&system)?,
                Command::Srb => s.srb(&system)?,
                Command::Perturb => s.perturb(&fiber, "occupancy.ogrid")?,
                Command::All => {
                    s.construct(&fiber)?;
                    s.certify(&fiber)?;
                    s.massive(&system)?;
                    s.lyapunov(&system)?;
                    s.perturb(&fiber, "occupancy_perturbed.ogrid")?;
                }
            }
        }
        Err(e) => {
            // A construction that cannot be certified is a check failure.
            log::warn!("construction failed: {e}");
            s.failures.push(format!("construct: {e}"));
            s.section("construct", &json!({ "error": e.to_string() }))?;
        }
    }

    let all_passed = s.failures.is_empty();
    let timestamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let report = json!({
        "command": command,
        "config": cfg,
        "versions": {
            "massive_attractor": env!("CARGO_PKG_VERSION"),
            "report_format": REPORT_FORMAT,
        },
        "timestamp_unix": timestamp,
        "sections": Value::Object(s.sections),
        "failures": s.failures,
        "all_passed": all_passed,
    });
    let path = out.join("report.json");
    let mut w = BufWriter::new(File::create(&path)?);
    serde_json::to_writer_pretty(&mut w, &report)?;
    writeln!(w)?;
    w.flush()?;
    s.files.push(path);
    Ok(RunOutcome {
        all_passed,
        failures: s.failures,
        report,
        files: s.files,
    })
}
