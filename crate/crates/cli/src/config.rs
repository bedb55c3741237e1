//! Run configuration documents.

use std::path::{Path, PathBuf};

use pcce::analysis::WindowMode;
use pcce::bath::{BathSpec, HyperfineMode};
use pcce::cce::{Averaging, BathPreparation, BathStateMode, CceConfig, PartitionMode};
use pcce::curve::{geometric_grid, validate_grid};
use pcce::exact::ExactConfig;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;
/// Bath radius at 1 ppm when none is given, nm; scales as ρ^(−1/3).
pub const DEFAULT_BATH_RADIUS_1PPM: f64 = 60.0;
pub const DEFAULT_AUTO_POINTS: usize = 60;

/// Invalid configuration, reported with the offending field path.
#[derive(Debug)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.path.is_empty() || self.path == "." {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

fn invalid(path: &str, message: impl std::fmt::Display) -> ConfigError {
    ConfigError {
        path: path.to_string(),
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BathConfig {
    pub concentration_ppm: f64,
    pub layer_thickness: f64,
    pub hyperfine_mode: HyperfineMode,
    /// nm; `60 ρ^(−1/3)` when absent.
    #[serde(default)]
    pub bath_radius: Option<f64>,
    /// nm; two thirds of the dipole radius when absent.
    #[serde(default)]
    pub shell_thickness: Option<f64>,
    #[serde(default)]
    pub preparation: BathPreparation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Method {
    Pcce {
        n: usize,
        k: usize,
    },
    Cce {
        n: usize,
    },
    Exact,
    /// Noiseless `exp[−(t/T2)^p]` with `T2 = t2_1ppm · ρ^slope`; no simulation.
    Model {
        t2_1ppm: f64,
        slope: f64,
        p: f64,
    },
}

/// Optional overrides of the recommended pCCE settings.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CceOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dipole_radius_rd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rd_base_r_d1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub internal_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normal_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub averaging: Option<Averaging>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bath_state_mode: Option<BathStateMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unphysical_tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub division_guard: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition_mode: Option<PartitionMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension_cap: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TimeGrid {
    /// Geometric grid around the 1/e time of a pilot run on realization 0.
    Auto {
        points: usize,
    },
    Explicit(Vec<f64>),
    Geometric {
        t_lo: f64,
        t_hi: f64,
        points: usize,
    },
}

impl Default for TimeGrid {
    fn default() -> Self {
        TimeGrid::Auto {
            points: DEFAULT_AUTO_POINTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub n_realizations: usize,
    #[serde(default)]
    pub master_seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            n_realizations: 1,
            master_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub window: WindowMode,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            window: WindowMode::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub concentrations_ppm: Vec<f64>,
    pub layer_thicknesses: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    K,
    Rb,
    Rd,
    InternalSamples,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceStudy {
    pub axis: Axis,
    pub values: Vec<f64>,
    /// Also compare every curve against the exact engine on the same baths.
    #[serde(default)]
    pub exact_reference: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub bath: BathConfig,
    pub method: Method,
    #[serde(default)]
    pub cce: CceOverrides,
    #[serde(default = "ExactConfig::dense")]
    pub exact: ExactConfig,
    #[serde(default)]
    pub time_grid: TimeGrid,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceStudy>,
}

/// Reads and validates a configuration file.
pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| invalid("", format!("cannot read {}: {e}", path.display())))?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        invalid(&path, e.into_inner())
    })?;
    config.validate()?;
    Ok(config)
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(
                "schema_version",
                format!(
                    "unsupported version {} (expected {SCHEMA_VERSION})",
                    self.schema_version
                ),
            ));
        }
        let b = &self.bath;
        if let Some(r) = b.bath_radius {
            if !(r > 0.0) {
                return Err(invalid("bath.bath_radius", "must be positive"));
            }
        }
        if let Some(s) = b.shell_thickness {
            if !(s >= 0.0) {
                return Err(invalid("bath.shell_thickness", "must be non-negative"));
            }
        }
        match b.preparation {
            BathPreparation::Nearest { n: 0 } => {
                return Err(invalid("bath.preparation.nearest.n", "must be at least 1"))
            }
            BathPreparation::Grow {
                min_dynamic_spins: 0,
            } => {
                return Err(invalid(
                    "bath.preparation.grow.min_dynamic_spins",
                    "must be at least 1",
                ))
            }
            _ => {}
        }
        self.bath_spec()
            .validate()
            .map_err(|e| invalid("bath", e))?;
        match self.method {
            Method::Pcce { n, k } => {
                if n == 0 {
                    return Err(invalid("method.pcce.n", "must be at least 1"));
                }
                if k == 0 {
                    return Err(invalid("method.pcce.k", "must be at least 1"));
                }
            }
            Method::Cce { n } => {
                if !(1..=3).contains(&n) {
                    return Err(invalid("method.cce.n", "must be 1, 2 or 3"));
                }
            }
            Method::Exact => {}
            Method::Model { t2_1ppm, slope, p } => {
                if !(t2_1ppm > 0.0) || !slope.is_finite() || !(p > 0.0) {
                    return Err(invalid(
                        "method.model",
                        "t2_1ppm and p must be positive, slope finite",
                    ));
                }
            }
        }
        match &self.time_grid {
            TimeGrid::Auto { points } if *points < 2 => {
                return Err(invalid("time_grid.auto.points", "must be at least 2"));
            }
            TimeGrid::Geometric { t_lo, t_hi, points } => {
                if !(*t_lo > 0.0 && t_hi > t_lo) || *points < 2 {
                    return Err(invalid(
                        "time_grid.geometric",
                        "need 0 < t_lo < t_hi and at least 2 points",
                    ));
                }
            }
            TimeGrid::Explicit(t) => {
                validate_grid(t).map_err(|e| invalid("time_grid.explicit", e))?
            }
            _ => {}
        }
        if self.ensemble.n_realizations == 0 {
            return Err(invalid("ensemble.n_realizations", "must be at least 1"));
        }
        self.cce_config(vec![0.0, 1.0])
            .validate()
            .map_err(|e| invalid("cce", e))?;
        self.exact.validate().map_err(|e| invalid("exact", e))?;
        if let WindowMode::Explicit { t_lo, t_hi } = self.fit.window {
            if !(t_hi > t_lo) {
                return Err(invalid("fit.window", "t_hi must exceed t_lo"));
            }
        }
        if let WindowMode::Levels { hi, lo } = self.fit.window {
            if !(0.0 < lo && lo < hi && hi < 1.0) {
                return Err(invalid("fit.window", "need 0 < lo < hi < 1"));
            }
        }
        if let Some(s) = &self.sweep {
            if s.concentrations_ppm.len() < 3 {
                return Err(invalid(
                    "sweep.concentrations_ppm",
                    "at least three concentrations are needed for slopes",
                ));
            }
            if s.layer_thicknesses.is_empty() {
                return Err(invalid("sweep.layer_thicknesses", "must not be empty"));
            }
            if s.concentrations_ppm
                .iter()
                .chain(&s.layer_thicknesses)
                .any(|v| !(*v > 0.0))
            {
                return Err(invalid(
                    "sweep",
                    "concentrations and thicknesses must be positive",
                ));
            }
        }
        if let Some(c) = &self.convergence {
            if c.values.is_empty() {
                return Err(invalid("convergence.values", "must not be empty"));
            }
            let integral = matches!(c.axis, Axis::K | Axis::InternalSamples);
            for v in &c.values {
                if !(*v > 0.0) || (integral && v.fract() != 0.0) {
                    return Err(invalid(
                        "convergence.values",
                        format!("invalid value {v} for axis {:?}", c.axis),
                    ));
                }
            }
            if matches!(c.axis, Axis::K | Axis::InternalSamples | Axis::Rd) && !self.is_cce_family()
            {
                return Err(invalid(
                    "convergence.axis",
                    "axis requires a pcce or cce method",
                ));
            }
        }
        Ok(())
    }

    pub fn is_cce_family(&self) -> bool {
        matches!(self.method, Method::Pcce { .. } | Method::Cce { .. })
    }

    /// Order and partition size of the CCE settings (pCCE(2,1) for non-CCE methods).
    fn order_and_k(&self) -> (usize, usize) {
        match self.method {
            Method::Pcce { n, k } => (n, k),
            Method::Cce { n } => (n, 1),
            _ => (2, 1),
        }
    }

    /// Recommended CCE settings with the overrides applied.
    pub fn cce_config(&self, time_grid: Vec<f64>) -> CceConfig {
        let (n, k) = self.order_and_k();
        let mut c = CceConfig::recommended(n, k, time_grid);
        let o = &self.cce;
        c.dipole_radius_rd = o.dipole_radius_rd.or(c.dipole_radius_rd);
        c.rd_base_r_d1 = o.rd_base_r_d1.unwrap_or(c.rd_base_r_d1);
        c.internal_samples = o.internal_samples.unwrap_or(c.internal_samples);
        c.normal_samples = o.normal_samples.unwrap_or(c.normal_samples);
        c.averaging = o.averaging.unwrap_or(c.averaging);
        c.bath_state_mode = o.bath_state_mode.unwrap_or(c.bath_state_mode);
        c.unphysical_tolerance = o.unphysical_tolerance.unwrap_or(c.unphysical_tolerance);
        c.division_guard = o.division_guard.unwrap_or(c.division_guard);
        c.partition_mode = o.partition_mode.unwrap_or(c.partition_mode);
        c.dimension_cap = o.dimension_cap.unwrap_or(c.dimension_cap);
        c
    }

    /// Partition size used when padding grown baths.
    pub fn partition_size(&self) -> usize {
        self.order_and_k().1
    }

    pub fn bath_spec(&self) -> BathSpec {
        let b = &self.bath;
        let rho = b.concentration_ppm;
        let rd = self.cce_config(vec![0.0, 1.0]).resolved_rd(&BathSpec {
            concentration_ppm: rho,
            layer_thickness: b.layer_thickness,
            bath_radius: 1.0,
            shell_thickness: 0.0,
            hyperfine_mode: b.hyperfine_mode,
            seed: 0,
        });
        BathSpec {
            concentration_ppm: rho,
            layer_thickness: b.layer_thickness,
            bath_radius: b
                .bath_radius
                .unwrap_or_else(|| DEFAULT_BATH_RADIUS_1PPM * rho.powf(-1.0 / 3.0)),
            shell_thickness: b.shell_thickness.unwrap_or(2.0 * rd / 3.0),
            hyperfine_mode: b.hyperfine_mode,
            seed: 0,
        }
    }

    /// Fixed grid, or `None` when it must come from a pilot run.
    pub fn fixed_time_grid(&self) -> Option<Vec<f64>> {
        match &self.time_grid {
            TimeGrid::Auto { .. } => None,
            TimeGrid::Explicit(t) => Some(t.clone()),
            TimeGrid::Geometric { t_lo, t_hi, points } => {
                Some(geometric_grid(*t_lo, *t_hi, *points))
            }
        }
    }
}
