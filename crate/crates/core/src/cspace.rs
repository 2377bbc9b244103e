//! Configuration space in the Frenet frame.
//!
//! The ego vehicle is a mass point; every other participant is an
//! axis-aligned rectangle already grown by the ego's footprint and safety
//! offsets. Collision checking therefore reduces to point-in-rectangle tests
//! at sampled times.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bspline::{sample_times, FrenetPoint, SplineError, UniformBSpline};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CspaceError {
    #[error("time {t} outside prediction horizon [{start}, {end}] of obstacle `{id}`")]
    BeyondHorizon { id: String, t: f64, start: f64, end: f64 },
    #[error("invalid obstacle `{id}`: {reason}")]
    InvalidObstacle { id: String, reason: String },
    #[error("invalid vehicle parameters: {0}")]
    InvalidVehicle(String),
    #[error(transparent)]
    Spline(#[from] SplineError),
}

/// Kinematic bicycle parameters of the ego vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    pub wheelbase: f64,
    pub max_steering: f64,
    pub width: f64,
    pub length: f64,
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), CspaceError> {
        if !(self.wheelbase > 0.0) {
            return Err(CspaceError::InvalidVehicle("wheelbase must be > 0".into()));
        }
        if !(self.max_steering > 0.0 && self.max_steering < std::f64::consts::FRAC_PI_2) {
            return Err(CspaceError::InvalidVehicle("max steering must lie in (0, pi/2)".into()));
        }
        if !(self.width > 0.0) || !(self.length > 0.0) {
            return Err(CspaceError::InvalidVehicle("width and length must be > 0".into()));
        }
        Ok(())
    }

    /// R = L / tan(delta_max).
    pub fn min_turn_radius(&self) -> f64 {
        self.wheelbase / self.max_steering.tan()
    }

    pub fn max_curvature(&self) -> f64 {
        1.0 / self.min_turn_radius()
    }
}

/// Per-side growth applied to obstacle footprints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InflationConfig {
    pub s_offset: f64,
    pub l_offset: f64,
}

impl InflationConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.s_offset >= 0.0) || !(self.l_offset >= 0.0) {
            return Err("inflation offsets must be >= 0".into());
        }
        Ok(())
    }

    pub fn inflate(&self, half_s: f64, half_l: f64) -> (f64, f64) {
        (half_s + self.s_offset, half_l + self.l_offset)
    }
}

/// Axis-aligned rectangle in the Frenet frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub center: FrenetPoint,
    pub half_s: f64,
    pub half_l: f64,
}

impl Rect {
    pub fn new(center: FrenetPoint, half_s: f64, half_l: f64) -> Self {
        Self { center, half_s, half_l }
    }

    /// Closed containment test.
    pub fn contains(&self, p: FrenetPoint) -> bool {
        (p.s - self.center.s).abs() <= self.half_s && (p.l - self.center.l).abs() <= self.half_l
    }

    pub fn s_min(&self) -> f64 {
        self.center.s - self.half_s
    }
    pub fn s_max(&self) -> f64 {
        self.center.s + self.half_s
    }
    pub fn l_min(&self) -> f64 {
        self.center.l - self.half_l
    }
    pub fn l_max(&self) -> f64 {
        self.center.l + self.half_l
    }

    pub fn clamp(&self, p: FrenetPoint) -> FrenetPoint {
        FrenetPoint::new(
            p.s.clamp(self.s_min(), self.s_max()),
            p.l.clamp(self.l_min(), self.l_max()),
        )
    }

    /// Closest boundary point to `p` and the outward unit normal pointing
    /// away from the obstacle at that point. For interior points the nearest
    /// face wins; ties resolve in the order rear, front, right, left.
    pub fn boundary_anchor(&self, p: FrenetPoint) -> (FrenetPoint, FrenetPoint) {
        if self.contains(p) {
            let faces = [
                (p.s - self.s_min(), FrenetPoint::new(-1.0, 0.0)),
                (self.s_max() - p.s, FrenetPoint::new(1.0, 0.0)),
                (p.l - self.l_min(), FrenetPoint::new(0.0, -1.0)),
                (self.l_max() - p.l, FrenetPoint::new(0.0, 1.0)),
            ];
            let (depth, normal) =
                faces.iter().copied().fold(
                    (f64::INFINITY, FrenetPoint::ZERO),
                    |best, f| {
                        if f.0 < best.0 {
                            f
                        } else {
                            best
                        }
                    },
                );
            (p + normal * depth, normal)
        } else {
            let q = self.clamp(p);
            let dir = (p - q).normalized().unwrap_or(FrenetPoint::new(-1.0, 0.0));
            (q, dir)
        }
    }
}

/// What an obstacle does outside its predicted time span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HorizonPolicy {
    /// Hold the nearest stored frame.
    #[default]
    Persist,
    /// The obstacle is absent outside its frames.
    Vanish,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstacleFrame {
    pub t: f64,
    pub center: FrenetPoint,
    pub half_extent_s: f64,
    pub half_extent_l: f64,
}

impl ObstacleFrame {
    pub fn rect(&self) -> Rect {
        Rect::new(self.center, self.half_extent_s, self.half_extent_l)
    }
}

/// Predicted, already inflated occupancy of one traffic participant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstaclePrediction {
    pub id: String,
    pub frames: Vec<ObstacleFrame>,
    pub is_static: bool,
    #[serde(default)]
    pub horizon: HorizonPolicy,
}

impl ObstaclePrediction {
    pub fn new_static(id: impl Into<String>, rect: Rect) -> Self {
        Self {
            id: id.into(),
            frames: vec![ObstacleFrame {
                t: 0.0,
                center: rect.center,
                half_extent_s: rect.half_s,
                half_extent_l: rect.half_l,
            }],
            is_static: true,
            horizon: HorizonPolicy::Persist,
        }
    }

    pub fn new_dynamic(
        id: impl Into<String>,
        frames: Vec<ObstacleFrame>,
        horizon: HorizonPolicy,
    ) -> Result<Self, CspaceError> {
        let obstacle = Self {
            id: id.into(),
            frames,
            is_static: false,
            horizon,
        };
        obstacle.validate()?;
        Ok(obstacle)
    }

    pub fn validate(&self) -> Result<(), CspaceError> {
        let invalid = |reason: &str| CspaceError::InvalidObstacle {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.frames.is_empty() {
            return Err(invalid("at least one frame is required"));
        }
        for f in &self.frames {
            if !(f.t.is_finite() && f.center.is_finite()) {
                return Err(invalid("frame values must be finite"));
            }
            if !(f.half_extent_s > 0.0 && f.half_extent_l > 0.0) {
                return Err(invalid("half extents must be > 0"));
            }
        }
        if self.frames.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(invalid("frame timestamps must be strictly increasing"));
        }
        Ok(())
    }

    pub fn first_time(&self) -> f64 {
        self.frames[0].t
    }

    pub fn last_time(&self) -> f64 {
        self.frames[self.frames.len() - 1].t
    }

    /// Occupancy at `t`, or `None` when the horizon policy says the obstacle
    /// is absent.
    pub fn rect_at(&self, t: f64) -> Option<Rect> {
        match occupancy_at(self, t) {
            Ok(r) => Some(r),
            Err(_) => match self.horizon {
                HorizonPolicy::Persist if t < self.first_time() => Some(self.frames[0].rect()),
                HorizonPolicy::Persist => Some(self.frames[self.frames.len() - 1].rect()),
                HorizonPolicy::Vanish => None,
            },
        }
    }
}

/// Linear interpolation of the stored frames. Static obstacles are valid at
/// any time; dynamic ones only inside their frame span.
pub fn occupancy_at(obs: &ObstaclePrediction, t: f64) -> Result<Rect, CspaceError> {
    if obs.is_static || obs.frames.len() == 1 && t == obs.frames[0].t {
        return Ok(obs.frames[0].rect());
    }
    let (start, end) = (obs.first_time(), obs.last_time());
    if !(t >= start && t <= end) {
        return Err(CspaceError::BeyondHorizon {
            id: obs.id.clone(),
            t,
            start,
            end,
        });
    }
    let idx = obs.frames.partition_point(|f| f.t <= t);
    // idx >= 1 because t >= start
    let a = &obs.frames[idx - 1];
    if a.t == t || idx == obs.frames.len() {
        return Ok(a.rect());
    }
    let b = &obs.frames[idx];
    let u = (t - a.t) / (b.t - a.t);
    let lerp = |x: f64, y: f64| x + (y - x) * u;
    Ok(Rect::new(
        FrenetPoint::new(lerp(a.center.s, b.center.s), lerp(a.center.l, b.center.l)),
        lerp(a.half_extent_s, b.half_extent_s),
        lerp(a.half_extent_l, b.half_extent_l),
    ))
}

/// First sampled conflict between a trajectory and the obstacles.
#[derive(Debug, Clone, PartialEq)]
pub struct Conflict {
    /// Absolute time of the sample.
    pub time: f64,
    /// Time relative to the trajectory start.
    pub ttc: f64,
    pub obstacle_id: String,
    pub obstacle_index: usize,
}

pub fn first_conflict(
    traj: &UniformBSpline,
    obstacles: &[ObstaclePrediction],
    dt: f64,
) -> Result<Option<Conflict>, CspaceError> {
    if obstacles.is_empty() {
        return Ok(None);
    }
    for t in sample_times(traj.t_start(), traj.t_end(), dt)? {
        let p = traj.evaluate(t)?;
        for (j, obs) in obstacles.iter().enumerate() {
            if obs.rect_at(t).is_some_and(|r| r.contains(p)) {
                return Ok(Some(Conflict {
                    time: t,
                    ttc: t - traj.t_start(),
                    obstacle_id: obs.id.clone(),
                    obstacle_index: j,
                }));
            }
        }
    }
    Ok(None)
}

/// Time to collision relative to the trajectory start: `0.0` when the first
/// sample already collides, `f64::INFINITY` when no sample does.
pub fn detect_collision(traj: &UniformBSpline, obstacles: &[ObstaclePrediction], dt: f64) -> Result<f64, CspaceError> {
    Ok(first_conflict(traj, obstacles, dt)?.map_or(f64::INFINITY, |c| c.ttc))
}

/// Every `(sample time, obstacle index)` pair where the trajectory is inside
/// an obstacle.
pub fn colliding_samples(
    traj: &UniformBSpline,
    obstacles: &[ObstaclePrediction],
    dt: f64,
) -> Result<Vec<(f64, usize)>, CspaceError> {
    let mut hits = Vec::new();
    if obstacles.is_empty() {
        return Ok(hits);
    }
    for t in sample_times(traj.t_start(), traj.t_end(), dt)? {
        let p = traj.evaluate(t)?;
        for (j, obs) in obstacles.iter().enumerate() {
            if obs.rect_at(t).is_some_and(|r| r.contains(p)) {
                hits.push((t, j));
            }
        }
    }
    Ok(hits)
}

/// A control point paired with an obstacle it conflicts with, and the time
/// at which the obstacle occupancy is evaluated for it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlConflict {
    pub control_index: usize,
    pub point: FrenetPoint,
    pub obstacle: usize,
    pub time: f64,
}

/// Anchor point on an inflated obstacle and the direction along which the
/// signed obstacle distance of a control point is measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorPair {
    pub p: FrenetPoint,
    pub v: FrenetPoint,
    pub obstacle_id: String,
    pub control_index: usize,
}

/// Builds one anchor pair per conflict. `p` is the closest point on the
/// rectangle boundary and `v` points out of the obstacle, so the distance is
/// negative for interior control points and positive outside. Conflicts whose
/// obstacle is absent at the conflict time are skipped.
pub fn anchor_pairs(conflicts: &[ControlConflict], obstacles: &[ObstaclePrediction]) -> Vec<AnchorPair> {
    conflicts
        .iter()
        .filter_map(|c| {
            let obs = obstacles.get(c.obstacle)?;
            let rect = obs.rect_at(c.time)?;
            let (p, v) = rect.boundary_anchor(c.point);
            Some(AnchorPair {
                p,
                v,
                obstacle_id: obs.id.clone(),
                control_index: c.control_index,
            })
        })
        .collect()
}

/// Signed distance `(q - p) . v`; larger is farther from the obstacle.
pub fn obstacle_distance(q: FrenetPoint, pair: &AnchorPair) -> f64 {
    (q - pair.p).dot(pair.v)
}

/// Static rectangles bounding the drivable corridor `[l_min, l_max]`,
/// shrunk by the ego half width, over `[s_min, s_max]`.
pub fn corridor_boundaries(
    l_min: f64,
    l_max: f64,
    ego_half_width: f64,
    s_min: f64,
    s_max: f64,
) -> Vec<ObstaclePrediction> {
    const DEPTH: f64 = 50.0;
    let half_s = 0.5 * (s_max - s_min);
    let center_s = 0.5 * (s_max + s_min);
    let right_face = l_min + ego_half_width;
    let left_face = l_max - ego_half_width;
    vec![
        ObstaclePrediction::new_static(
            "road_boundary_right",
            Rect::new(FrenetPoint::new(center_s, right_face - DEPTH), half_s, DEPTH),
        ),
        ObstaclePrediction::new_static(
            "road_boundary_left",
            Rect::new(FrenetPoint::new(center_s, left_face + DEPTH), half_s, DEPTH),
        ),
    ]
}
