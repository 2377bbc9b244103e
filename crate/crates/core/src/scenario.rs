//! Scenario files: schema, loading with validation, dotted-key overrides and
//! saving.
//!
//! A scenario is a JSON document. Every physical quantity carries its unit in
//! the field name (`_s`, `_m`, `_mps`, ...). Unknown fields are rejected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::bspline::{fit_through, FrenetPoint, UniformBSpline};
use crate::costs::{CostWeights, FeasibilityShape, ShapeParams};
use crate::cspace::{
    corridor_boundaries, HorizonPolicy, InflationConfig, ObstacleFrame, ObstaclePrediction, VehicleParams,
};
use crate::fttr::SearchConfig;
use crate::optimizer::OptimizerConfig;
use crate::repair::{RepairRequest, RepairSettings, VehicleLimits};

pub const SCHEMA_VERSION: u32 = 1;

/// Fits worse than this (m, RMS) are reported as warnings.
pub const FIT_WARNING_RMS: f64 = 0.1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("invalid override `{0}`: expected key=value")]
    Override(String),
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meta {
    pub name: String,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSpec {
    pub t_s: f64,
    pub s_m: f64,
    pub l_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceSpec {
    /// Uniform B-spline given directly; points are `[s_m, l_m]`.
    ControlPoints {
        degree: usize,
        knot_interval_s: f64,
        t_start_s: f64,
        control_points: Vec<[f64; 2]>,
    },
    /// Time-stamped positions fitted by least squares.
    Samples {
        degree: usize,
        knot_interval_s: f64,
        samples: Vec<SampleSpec>,
    },
}

impl ReferenceSpec {
    pub fn from_spline(spline: &UniformBSpline) -> Self {
        Self::ControlPoints {
            degree: spline.degree(),
            knot_interval_s: spline.knot_interval(),
            t_start_s: spline.t_start(),
            control_points: spline.control_points().iter().map(|q| [q.s, q.l]).collect(),
        }
    }

    /// Builds the spline, returning the fit residual for sampled references.
    pub fn to_spline(&self) -> Result<(UniformBSpline, Option<f64>), ScenarioError> {
        match self {
            Self::ControlPoints {
                degree,
                knot_interval_s,
                t_start_s,
                control_points,
            } => {
                let q = control_points.iter().map(|p| FrenetPoint::new(p[0], p[1])).collect();
                let spline = UniformBSpline::new(*degree, q, *knot_interval_s, *t_start_s)
                    .map_err(|e| invalid("reference", e.to_string()))?;
                Ok((spline, None))
            }
            Self::Samples {
                degree,
                knot_interval_s,
                samples,
            } => {
                let points: Vec<(f64, FrenetPoint)> = samples
                    .iter()
                    .map(|p| (p.t_s, FrenetPoint::new(p.s_m, p.l_m)))
                    .collect();
                let fit = fit_through(&points, *degree, *knot_interval_s)
                    .map_err(|e| invalid("reference.samples", e.to_string()))?;
                Ok((fit.spline, Some(fit.residual_rms)))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InflationSpec {
    pub s_offset_m: f64,
    pub l_offset_m: f64,
}

/// Drivable lateral corridor; turned into two static boundary obstacles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadSpec {
    pub l_min_m: f64,
    pub l_max_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameSpec {
    pub t_s: f64,
    pub s_m: f64,
    pub l_m: f64,
    /// Half extent along `s` (m).
    pub half_length_m: f64,
    /// Half extent along `l` (m).
    pub half_width_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSpec {
    pub id: String,
    #[serde(rename = "static")]
    pub is_static: bool,
    /// Whether the half extents already include the inflation offsets.
    #[serde(default)]
    pub inflated: bool,
    #[serde(default)]
    pub beyond_horizon: HorizonPolicy,
    pub frames: Vec<FrameSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSpec {
    pub wheelbase_m: f64,
    pub max_steering_rad: f64,
    pub width_m: f64,
    pub length_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitsSpec {
    pub v_max_mps: f64,
    pub a_max_mps2: f64,
    pub j_max_mps3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: u32,
    pub meta: Meta,
    pub reference: ReferenceSpec,
    pub inflation: InflationSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub road: Option<RoadSpec>,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
    pub vehicle: VehicleSpec,
    pub limits: LimitsSpec,
    pub weights: CostWeights,
    #[serde(default)]
    pub shape: ShapeParams,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
}

/// A validated scenario with domain objects ready for planning.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub reference: UniformBSpline,
    pub fit_residual_rms: Option<f64>,
    /// Inflated obstacles including road boundaries.
    pub obstacles: Vec<ObstaclePrediction>,
    pub vehicle: VehicleParams,
    pub limits: VehicleLimits,
    pub weights: CostWeights,
    pub shape: FeasibilityShape,
    pub search: SearchConfig,
    pub settings: RepairSettings,
    pub warnings: Vec<String>,
}

impl Scenario {
    pub fn name(&self) -> &str {
        &self.file.meta.name
    }

    /// Repair request with `t_rep` at the reference start.
    pub fn request(&self) -> RepairRequest {
        RepairRequest {
            reference: self.reference.clone(),
            obstacles: self.obstacles.clone(),
            vehicle: self.vehicle,
            limits: self.limits,
            weights: self.weights,
            shape: self.shape,
            settings: self.settings,
            t_rep: self.reference.t_start(),
        }
    }

    pub fn from_file(file: ScenarioFile) -> Result<Self, ScenarioError> {
        if file.schema_version != SCHEMA_VERSION {
            return Err(invalid(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", file.schema_version),
            ));
        }
        let mut warnings = Vec::new();
        let (reference, fit_residual_rms) = file.reference.to_spline()?;
        if reference.degree() < 3 {
            return Err(invalid("reference.degree", "must be at least 3 for jerk terms"));
        }
        if let Some(rms) = fit_residual_rms {
            if rms > FIT_WARNING_RMS {
                warnings.push(format!(
                    "reference fit residual {rms:.4} m RMS exceeds {FIT_WARNING_RMS} m"
                ));
            }
        }
        let (t0, th) = (reference.t_start(), reference.t_end());

        let inflation = InflationConfig {
            s_offset: file.inflation.s_offset_m,
            l_offset: file.inflation.l_offset_m,
        };
        inflation.validate().map_err(|e| invalid("inflation", e))?;

        let v = &file.vehicle;
        let vehicle = VehicleParams {
            wheelbase: v.wheelbase_m,
            max_steering: v.max_steering_rad,
            width: v.width_m,
            length: v.length_m,
        };
        vehicle.validate().map_err(|e| invalid("vehicle", e.to_string()))?;

        let mut obstacles = Vec::new();
        for (k, spec) in file.obstacles.iter().enumerate() {
            let field = format!("obstacles[{k}]");
            if spec.is_static && spec.frames.len() != 1 {
                return Err(invalid(
                    format!("{field}.frames"),
                    "static obstacles take exactly one frame",
                ));
            }
            let frames = spec
                .frames
                .iter()
                .map(|f| {
                    let (hs, hl) = if spec.inflated {
                        (f.half_length_m, f.half_width_m)
                    } else {
                        inflation.inflate(f.half_length_m, f.half_width_m)
                    };
                    ObstacleFrame {
                        t: f.t_s,
                        center: FrenetPoint::new(f.s_m, f.l_m),
                        half_extent_s: hs,
                        half_extent_l: hl,
                    }
                })
                .collect::<Vec<_>>();
            if !spec.is_static {
                for (i, f) in frames.iter().enumerate() {
                    if !(f.t >= t0 - 1e-9 && f.t <= th + 1e-9) {
                        return Err(invalid(
                            format!("{field}.frames[{i}].t_s"),
                            format!("{} lies outside the reference horizon [{t0}, {th}]", f.t),
                        ));
                    }
                }
            }
            let obstacle = ObstaclePrediction {
                id: spec.id.clone(),
                frames,
                is_static: spec.is_static,
                horizon: spec.beyond_horizon,
            };
            obstacle.validate().map_err(|e| invalid(field, e.to_string()))?;
            if obstacles.iter().any(|o: &ObstaclePrediction| o.id == obstacle.id) {
                return Err(invalid(format!("obstacles[{k}].id"), "duplicate obstacle id"));
            }
            obstacles.push(obstacle);
        }
        if let Some(road) = file.road {
            let half = 0.5 * vehicle.width;
            if !(road.l_max_m - road.l_min_m > 2.0 * half) {
                return Err(invalid("road", "corridor narrower than the vehicle"));
            }
            let q = reference.control_points();
            let (mut s_lo, mut s_hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for p in q {
                s_lo = s_lo.min(p.s);
                s_hi = s_hi.max(p.s);
            }
            let margin = 0.5 * (s_hi - s_lo) + 100.0;
            obstacles.extend(corridor_boundaries(
                road.l_min_m,
                road.l_max_m,
                half,
                s_lo - margin,
                s_hi + margin,
            ));
        }

        let l = &file.limits;
        let limits = VehicleLimits::new(l.v_max_mps, l.a_max_mps2, l.j_max_mps3, &vehicle);
        limits.validate().map_err(|e| invalid("limits", e.to_string()))?;
        file.weights.validate().map_err(|e| invalid("weights", e.to_string()))?;
        let shape = FeasibilityShape::new(l.v_max_mps, l.a_max_mps2, l.j_max_mps3, file.shape)
            .map_err(|e| invalid("shape", e.to_string()))?;
        file.search.validate().map_err(|e| invalid("search", e))?;
        file.optimizer
            .validate()
            .map_err(|e| invalid("optimizer", e.to_string()))?;
        let settings = RepairSettings {
            optimizer: file.optimizer,
            collision_check_dt: file.search.collision_check_dt,
            ..RepairSettings::default()
        };

        Ok(Self {
            reference,
            fit_residual_rms,
            obstacles,
            vehicle,
            limits,
            weights: file.weights,
            shape,
            search: file.search,
            settings,
            warnings,
            file,
        })
    }
}

fn parse_value(value: Value) -> Result<ScenarioFile, ScenarioError> {
    serde_path_to_error::deserialize(value).map_err(|e| ScenarioError::Schema {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

/// Applies `key=value` overrides with dotted keys. Values are parsed as
/// JSON when possible and taken as strings otherwise.
pub fn apply_overrides(doc: &mut Value, overrides: &[String]) -> Result<(), ScenarioError> {
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| ScenarioError::Override(item.clone()))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(ScenarioError::Override(item.clone()));
        }
        let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut node = &mut *doc;
        let parts: Vec<&str> = key.split('.').collect();
        for (depth, part) in parts.iter().enumerate() {
            let last = depth + 1 == parts.len();
            let map = match node {
                Value::Object(map) => map,
                _ => return Err(invalid(key, format!("`{}` is not an object", parts[..depth].join(".")))),
            };
            if last {
                map.insert(part.to_string(), value.clone());
                break;
            }
            node = map
                .entry(part.to_string())
                .or_insert_with(|| Value::Object(Default::default()));
        }
    }
    Ok(())
}

pub fn parse_scenario(text: &str, overrides: &[String]) -> Result<Scenario, ScenarioError> {
    let mut doc: Value = serde_json::from_str(text).map_err(|e| ScenarioError::Schema {
        path: format!("line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    apply_overrides(&mut doc, overrides)?;
    Scenario::from_file(parse_value(doc)?)
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    load_scenario_with(path, &[])
}

pub fn load_scenario_with(path: &Path, overrides: &[String]) -> Result<Scenario, ScenarioError> {
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario(&text, overrides)
}

pub fn to_json(file: &ScenarioFile) -> String {
    let mut text = serde_json::to_string_pretty(file).expect("scenario serializes");
    text.push('\n');
    text
}

pub fn save_scenario(file: &ScenarioFile, path: &Path) -> Result<(), ScenarioError> {
    fs::write(path, to_json(file)).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })
}
