//! `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment. A `preset` line selects the
//! base values wherever it appears, every other key then overrides them.
//! Unknown keys, duplicates and out-of-range values are errors that carry
//! their line number.

use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fiber::{FiberParams, MAX_FIBER_DIM, MAX_ROOT_ORDER};
use crate::lab::LabSettings;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Fast,
    Paper,
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "fast" => Ok(Preset::Fast),
            "paper" => Ok(Preset::Paper),
            other => Err(format!("unknown preset {other:?} (expected fast or paper)")),
        }
    }
}

/// Which dynamics `simulate`, `srb` and `lyapunov` run on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    Skew,
    Solenoid,
}

impl FromStr for SystemKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "skew" => Ok(SystemKind::Skew),
            "solenoid" => Ok(SystemKind::Solenoid),
            other => Err(format!(
                "unknown system {other:?} (expected skew or solenoid)"
            )),
        }
    }
}

/// Every tunable of a run, after defaults and validation.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub preset: Preset,
    pub system: SystemKind,
    pub m: u32,
    pub d: usize,
    pub lambda: f64,
    pub epsilon: f64,
    pub enforce_epsilon: bool,
    /// `None` picks the smallest order meeting `epsilon` (or 1 when
    /// `epsilon` is not enforced).
    pub k: Option<u32>,
    pub r_hat: f64,
    pub r_check: f64,
    pub tau: Option<f64>,
    pub shrink: Option<f64>,
    pub solenoid_radius: f64,
    pub solenoid_alpha: f64,
    pub eps1: f64,
    pub eps2: f64,
    /// Scale of `A` for the interior test of perturbed systems.
    pub perturb_region_scale: f64,
    pub verify_grid: usize,
    pub mdsc_phi_samples: usize,
    pub mdsc_x_samples: usize,
    pub degree_phi_samples: usize,
    pub degree_x_samples: usize,
    pub lyapunov_steps: u64,
    pub lyapunov_tolerance: f64,
    pub lab: LabSettings,
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let base = Self {
            preset,
            system: SystemKind::Skew,
            m: 3,
            d: 1,
            lambda: 0.9,
            epsilon: 0.25,
            enforce_epsilon: false,
            k: Some(1),
            r_hat: 0.2,
            r_check: 0.025,
            tau: None,
            shrink: None,
            solenoid_radius: crate::system::SOLENOID_RADIUS,
            solenoid_alpha: crate::system::SOLENOID_ALPHA,
            eps1: 0.01,
            eps2: 0.01,
            perturb_region_scale: 0.95,
            verify_grid: 64,
            mdsc_phi_samples: 256,
            mdsc_x_samples: 10_000,
            degree_phi_samples: 4096,
            degree_x_samples: 64,
            lyapunov_steps: 100_000,
            lyapunov_tolerance: 0.02,
            lab: LabSettings::default(),
            threads: None,
        };
        match preset {
            Preset::Fast => base,
            Preset::Paper => Self {
                d: 2,
                r_check: 0.002,
                enforce_epsilon: true,
                k: None,
                ..base
            },
        }
    }

    pub fn fiber_params(&self) -> FiberParams {
        FiberParams {
            d: self.d,
            lambda: self.lambda,
            k: self.k,
            epsilon: self.epsilon,
            enforce_epsilon: self.enforce_epsilon,
            r_hat: self.r_hat,
            r_check: self.r_check,
            tau: self.tau,
            shrink: self.shrink,
            box_spec: None,
        }
    }

    fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        let fail = |key: &'static str, msg: String| Err((key, msg));
        if self.m < 3 {
            return fail("m", format!("m >= 3 required, got {}", self.m));
        }
        if self.d == 0 || self.d > MAX_FIBER_DIM {
            return fail("d", format!("d must be in 1..={MAX_FIBER_DIM}"));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return fail(
                "lambda",
                format!("lambda must be in (0, 1), got {}", self.lambda),
            );
        }
        if !(self.epsilon > 0.0) {
            return fail("epsilon", "epsilon must be positive".into());
        }
        if let Some(k) = self.k {
            if k == 0 || k > MAX_ROOT_ORDER {
                return fail("k", format!("k must be in 1..={MAX_ROOT_ORDER} or auto"));
            }
        }
        if !(self.r_check > 0.0 && self.r_check < self.r_hat && self.r_hat < 0.5) {
            return fail("r_hat", "need 0 < r_check < r_hat < 1/2".into());
        }
        if let Some(s) = self.shrink {
            if !(s >= 0.0) {
                return fail("shrink", "shrink must be non-negative".into());
            }
        }
        if !(self.perturb_region_scale > 0.0 && self.perturb_region_scale <= 1.0) {
            return fail("perturb_region_scale", "scale must be in (0, 1]".into());
        }
        if !(self.lab.region_scale > 0.0 && self.lab.region_scale <= 1.0) {
            return fail("region_scale", "scale must be in (0, 1]".into());
        }
        if !self.lab.occupancy_dims.is_empty() && self.lab.occupancy_dims.len() != self.d + 1 {
            return fail("occupancy_dims", format!("need {} entries", self.d + 1));
        }
        if self.lab.occupancy_burn_in > self.lab.occupancy_steps {
            return fail("occupancy_burn_in", "burn-in exceeds steps".into());
        }
        if self.lab.srb_steps < crate::lab::birkhoff::MIN_BIRKHOFF_STEPS {
            return fail("srb_steps", "at least 10000 steps required".into());
        }
        if self.lab.srb_starts < 2 {
            return fail("srb_starts", "at least two starts required".into());
        }
        if self.lyapunov_steps < crate::lab::lyapunov::MIN_LYAPUNOV_STEPS {
            return fail("lyapunov_steps", "at least 100000 steps required".into());
        }
        if self.lab.density_depth == 0 || self.lab.density_depth > crate::lab::density::MAX_DEPTH {
            return fail("density_depth", "depth must be in 1..=64".into());
        }
        if self.threads == Some(0) {
            return fail("threads", "threads must be positive".into());
        }
        Ok(())
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::preset(Preset::Fast)
    }
}

fn parse<T: FromStr>(value: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| format!("{value:?}: {e}"))
}

fn parse_list<T: FromStr>(value: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(parse)
        .collect()
}

fn parse_optional<T: FromStr>(value: &str) -> std::result::Result<Option<T>, String>
where
    T::Err: std::fmt::Display,
{
    if value == "auto" {
        Ok(None)
    } else {
        parse(value).map(Some)
    }
}

fn apply(cfg: &mut RunConfig, key: &str, value: &str) -> std::result::Result<(), String> {
    let lab = &mut cfg.lab;
    match key {
        "system" => cfg.system = parse(value)?,
        "m" => cfg.m = parse(value)?,
        "d" => cfg.d = parse(value)?,
        "lambda" => cfg.lambda = parse(value)?,
        "epsilon" => cfg.epsilon = parse(value)?,
        "enforce_epsilon" => cfg.enforce_epsilon = parse(value)?,
        "k" => cfg.k = parse_optional(value)?,
        "r_hat" => cfg.r_hat = parse(value)?,
        "r_check" => cfg.r_check = parse(value)?,
        "tau" => cfg.tau = parse_optional(value)?,
        "shrink" => cfg.shrink = parse_optional(value)?,
        "solenoid_radius" => cfg.solenoid_radius = parse(value)?,
        "solenoid_alpha" => cfg.solenoid_alpha = parse(value)?,
        "eps1" => cfg.eps1 = parse(value)?,
        "eps2" => cfg.eps2 = parse(value)?,
        "perturb_region_scale" => cfg.perturb_region_scale = parse(value)?,
        "verify_grid" => cfg.verify_grid = parse(value)?,
        "mdsc_phi_samples" => cfg.mdsc_phi_samples = parse(value)?,
        "mdsc_x_samples" => cfg.mdsc_x_samples = parse(value)?,
        "degree_phi_samples" => cfg.degree_phi_samples = parse(value)?,
        "degree_x_samples" => cfg.degree_x_samples = parse(value)?,
        "lyapunov_steps" => cfg.lyapunov_steps = parse(value)?,
        "lyapunov_tolerance" => cfg.lyapunov_tolerance = parse(value)?,
        "threads" => cfg.threads = Some(parse(value)?),
        "seed" => lab.seed = parse(value)?,
        "trap_phi_samples" => lab.trap_phi_samples = parse(value)?,
        "trap_directions" => lab.trap_directions = parse(value)?,
        "occupancy_starts" | "starts" => lab.occupancy_starts = parse(value)?,
        "occupancy_steps" | "steps" => lab.occupancy_steps = parse(value)?,
        "occupancy_burn_in" | "burn_in" => lab.occupancy_burn_in = parse(value)?,
        "occupancy_dims" | "grid_dims" => lab.occupancy_dims = parse_list(value)?,
        "region_scale" => lab.region_scale = parse(value)?,
        "srb_starts" => lab.srb_starts = parse(value)?,
        "srb_steps" => lab.srb_steps = parse(value)?,
        "srb_burn_in" => lab.srb_burn_in = parse(value)?,
        "srb_tolerance" => lab.srb_tolerance = parse(value)?,
        "cos_phi_tolerance" => lab.cos_phi_tolerance = parse(value)?,
        "density_phis" => lab.density_phis = parse_list(value)?,
        "density_depth" | "depth" => lab.density_depth = parse(value)?,
        "graph_length" => lab.graph_length = parse(value)?,
        "graph_trials" => lab.graph_trials = parse(value)?,
        _ => return Err(format!("unknown key {key:?}")),
    }
    Ok(())
}

/// Parses configuration text; an empty text gives the `fast` defaults.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_config_with(text, None)
}

/// As [`parse_config`], with `preset` taking precedence over a `preset` line.
pub fn parse_config_with(text: &str, preset: Option<Preset>) -> Result<RunConfig> {
    let mut entries: Vec<(usize, &str, &str)> = Vec::new();
    let mut file_preset = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
            line: line_no,
            message: format!("expected `key = value`, got {line:?}"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(Error::Config {
                line: line_no,
                message: "empty key or value".into(),
            });
        }
        if entries.iter().any(|(_, k, _)| *k == key) || (key == "preset" && file_preset.is_some()) {
            return Err(Error::Config {
                line: line_no,
                message: format!("duplicate key {key:?}"),
            });
        }
        if key == "preset" {
            file_preset = Some(value.parse::<Preset>().map_err(|message| Error::Config {
                line: line_no,
                message,
            })?);
        } else {
            entries.push((line_no, key, value));
        }
    }
    let mut cfg = RunConfig::preset(preset.or(file_preset).unwrap_or(Preset::Fast));
    let mut key_lines = Vec::new();
    for (line, key, value) in entries {
        apply(&mut cfg, key, value).map_err(|message| Error::Config { line, message })?;
        key_lines.push((key, line));
    }
    cfg.validate().map_err(|(key, message)| Error::Config {
        line: key_lines
            .iter()
            .find(|(k, _)| *k == key)
            .map_or(0, |&(_, l)| l),
        message,
    })?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_fast_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg.preset, Preset::Fast);
        assert_eq!((cfg.m, cfg.d, cfg.lambda), (3, 1, 0.9));
        assert_eq!(cfg.k, Some(1));
    }

    #[test]
    fn m_below_three_is_rejected() {
        let err = parse_config("# comment\nm = 2\n").unwrap_err();
        match err {
            Error::Config { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("m >= 3"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn lambda_out_of_range() {
        assert!(matches!(
            parse_config("lambda = 1.5"),
            Err(Error::Config { line: 1, .. })
        ));
    }

    #[test]
    fn unknown_and_malformed_lines() {
        assert!(matches!(
            parse_config("\n\nfoo = 1"),
            Err(Error::Config { line: 3, .. })
        ));
        assert!(matches!(
            parse_config("m 3"),
            Err(Error::Config { line: 1, .. })
        ));
        assert!(matches!(
            parse_config("m = 3\nm = 4"),
            Err(Error::Config { line: 2, .. })
        ));
        assert!(matches!(
            parse_config("m = three"),
            Err(Error::Config { line: 1, .. })
        ));
    }

    #[test]
    fn preset_applies_before_overrides() {
        let cfg = parse_config("d = 3\npreset = paper  # trailing comment\nk = 4").unwrap();
        assert_eq!(cfg.preset, Preset::Paper);
        assert_eq!(cfg.d, 3);
        assert_eq!(cfg.k, Some(4));
        assert!(cfg.enforce_epsilon);
        let cfg = parse_config_with("preset = paper", Some(Preset::Fast)).unwrap();
        assert_eq!(cfg.d, 1);
    }

    #[test]
    fn lists_and_auto() {
        let cfg =
            parse_config("density_phis = 0, 0.5\noccupancy_dims = 16,8\nk = auto\nshrink = 0.01")
                .unwrap();
        assert_eq!(cfg.lab.density_phis, vec![0.0, 0.5]);
        assert_eq!(cfg.lab.occupancy_dims, vec![16, 8]);
        assert_eq!(cfg.k, None);
        assert_eq!(cfg.shrink, Some(0.01));
    }
}
