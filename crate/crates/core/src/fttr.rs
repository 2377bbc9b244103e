//! Binary search for the latest repair start time that still yields a
//! collision-free, dynamically feasible trajectory, and the hard feasibility
//! check used to judge each candidate.

use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bspline::{sample_times, UniformBSpline};
use crate::cspace::{detect_collision, first_conflict, ObstaclePrediction};
use crate::repair::{plan, CandidateStatus, RepairCandidate, RepairError, RepairRequest, VehicleLimits};
use crate::scenario::Scenario;

/// Curvature is only checked where the speed exceeds this (m/s); the path
/// direction is undefined at standstill.
pub const CURVATURE_SPEED_FLOOR: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    /// Bracket width at which the search stops (s).
    #[serde(rename = "delta_t_s")]
    pub delta_t: f64,
    /// Wall-clock limit for the whole search (s).
    pub time_budget_s: f64,
    #[serde(rename = "collision_check_dt_s")]
    pub collision_check_dt: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            delta_t: 0.4,
            time_budget_s: 10.0,
            collision_check_dt: 0.05,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.delta_t > 0.0) {
            return Err(format!("search.delta_t_s must be > 0, got {}", self.delta_t));
        }
        if !(self.time_budget_s > 0.0) {
            return Err(format!("search.time_budget_s must be > 0, got {}", self.time_budget_s));
        }
        if !(self.collision_check_dt > 0.0) {
            return Err(format!(
                "search.collision_check_dt_s must be > 0, got {}",
                self.collision_check_dt
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub collision_free: bool,
    /// Absolute time of the first colliding sample.
    pub first_collision: Option<f64>,
    pub collision_obstacle: Option<String>,
    pub velocity_ok: bool,
    pub acceleration_ok: bool,
    pub jerk_ok: bool,
    /// Largest sampled norm divided by its limit.
    pub velocity_ratio: f64,
    pub acceleration_ratio: f64,
    pub jerk_ratio: f64,
    pub curvature_ok: bool,
    pub max_curvature: f64,
    pub overall: bool,
}

/// Samples `traj` every `dt` and checks collisions, the Euclidean norms of
/// velocity, acceleration and jerk, and the path curvature.
pub fn is_feasible(
    traj: &UniformBSpline,
    obstacles: &[ObstaclePrediction],
    limits: &VehicleLimits,
    dt: f64,
) -> Result<FeasibilityReport, RepairError> {
    let conflict = first_conflict(traj, obstacles, dt)?;
    let kin = traj.kinematics();
    let (mut v, mut a, mut j, mut kappa) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
    for t in sample_times(traj.t_start(), traj.t_end(), dt)? {
        let s = kin.at(t)?;
        let speed = s.velocity.norm();
        v = v.max(speed);
        a = a.max(s.acceleration.norm());
        j = j.max(s.jerk.norm());
        if speed > CURVATURE_SPEED_FLOOR {
            kappa = kappa.max(s.velocity.cross(s.acceleration).abs() / speed.powi(3));
        }
    }
    let velocity_ratio = v / limits.v_max;
    let acceleration_ratio = a / limits.a_max;
    let jerk_ratio = j / limits.j_max;
    let collision_free = conflict.is_none();
    let velocity_ok = velocity_ratio <= 1.0;
    let acceleration_ok = acceleration_ratio <= 1.0;
    let jerk_ok = jerk_ratio <= 1.0;
    let curvature_ok = kappa <= limits.kappa_max;
    Ok(FeasibilityReport {
        collision_free,
        first_collision: conflict.as_ref().map(|c| c.time),
        collision_obstacle: conflict.map(|c| c.obstacle_id),
        velocity_ok,
        acceleration_ok,
        jerk_ok,
        velocity_ratio,
        acceleration_ratio,
        jerk_ratio,
        curvature_ok,
        max_curvature: kappa,
        overall: collision_free && velocity_ok && acceleration_ok && jerk_ok && curvature_ok,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// The bracket shrank to the time resolution.
    Resolution,
    TimeBudget,
    /// The reference starts in collision or never collides.
    DegenerateBranch,
    Cancelled,
}

/// Outcome of one planner call inside the search.
#[derive(Debug, Clone)]
pub struct Probe {
    pub feasible: bool,
    pub trajectory: Option<UniformBSpline>,
    pub status: Option<CandidateStatus>,
    pub report: Option<FeasibilityReport>,
    pub candidate: Option<RepairCandidate>,
    pub error: Option<String>,
}

impl Probe {
    /// A probe judged only by a feasibility flag, without a trajectory.
    pub fn verdict(feasible: bool) -> Self {
        Self {
            feasible,
            trajectory: None,
            status: None,
            report: None,
            candidate: None,
            error: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SearchIteration {
    /// Repair time relative to the reference start (s).
    pub t_rep: f64,
    pub feasible: bool,
    /// Bracket after this iteration's update.
    pub t_start: f64,
    pub t_end: f64,
    /// Wall-clock duration of the planner call and check (s).
    pub elapsed_s: f64,
    pub probe: Probe,
}

#[derive(Debug, Clone)]
pub struct FttrResult {
    /// Seconds after the reference start; `0.0` or `f64::INFINITY` in the
    /// degenerate branches.
    pub f_ttr: f64,
    pub ttc: f64,
    pub gamma: UniformBSpline,
    /// Last repair time whose candidate was feasible, if any.
    pub last_feasible: Option<f64>,
    pub t_start: f64,
    pub t_end: f64,
    pub iterations: Vec<SearchIteration>,
    pub terminated_by: Termination,
    /// No feasible candidate was found in a non-degenerate search.
    pub unresolved: bool,
    pub total_time_s: f64,
}

impl FttrResult {
    pub fn planner_calls(&self) -> usize {
        self.iterations.len()
    }
}

/// Bisection over the repair time on `[0, ttc]` with a caller-supplied
/// planner. `gamma` starts as `reference` and is replaced only by feasible
/// probe trajectories.
pub fn binary_search<F>(
    reference: &UniformBSpline,
    ttc: f64,
    config: &SearchConfig,
    cancel: Option<&AtomicBool>,
    started: Instant,
    mut probe: F,
) -> FttrResult
where
    F: FnMut(f64) -> Probe,
{
    let mut result = FttrResult {
        f_ttr: 0.0,
        ttc,
        gamma: reference.clone(),
        last_feasible: None,
        t_start: 0.0,
        t_end: ttc,
        iterations: Vec::new(),
        terminated_by: Termination::DegenerateBranch,
        unresolved: false,
        total_time_s: 0.0,
    };
    if ttc == 0.0 || ttc.is_infinite() {
        result.f_ttr = ttc;
        result.t_end = if ttc == 0.0 { 0.0 } else { f64::INFINITY };
        result.total_time_s = started.elapsed().as_secs_f64();
        return result;
    }

    let in_time = || started.elapsed().as_secs_f64() < config.time_budget_s;
    let (mut t_start, mut t_end) = (0.0_f64, ttc);
    let mut t_rep = 0.0_f64;
    result.terminated_by = Termination::Resolution;
    loop {
        if (t_end - t_start).abs() <= config.delta_t {
            break;
        }
        if !in_time() {
            result.terminated_by = Termination::TimeBudget;
            break;
        }
        if cancel.is_some_and(|c| c.load(Ordering::Relaxed)) {
            result.terminated_by = Termination::Cancelled;
            break;
        }
        let call = Instant::now();
        let outcome = probe(t_rep);
        let elapsed_s = call.elapsed().as_secs_f64();
        if outcome.feasible {
            t_start = t_rep;
            if let Some(traj) = &outcome.trajectory {
                result.gamma = traj.clone();
            }
            result.last_feasible = Some(t_rep);
        } else {
            t_end = t_rep;
        }
        result.iterations.push(SearchIteration {
            t_rep,
            feasible: outcome.feasible,
            t_start,
            t_end,
            elapsed_s,
            probe: outcome,
        });
        t_rep = 0.5 * (t_start + t_end);
    }
    result.f_ttr = match result.terminated_by {
        Termination::Resolution => t_rep,
        _ => t_start,
    };
    result.t_start = t_start;
    result.t_end = t_end;
    result.unresolved = result.last_feasible.is_none();
    result.total_time_s = started.elapsed().as_secs_f64();
    result
}

/// Plans at `t_rep` (relative to the reference start) and judges the
/// candidate.
pub fn probe_planner(request: &RepairRequest, t_rep: f64, check_dt: f64) -> Probe {
    let absolute = request.reference.t_start() + t_rep;
    let candidate = match plan(&request.with_t_rep(absolute)) {
        Ok(c) => c,
        Err(e) => {
            return Probe {
                error: Some(e.to_string()),
                ..Probe::verdict(false)
            }
        }
    };
    match is_feasible(&candidate.trajectory, &request.obstacles, &request.limits, check_dt) {
        Ok(report) => Probe {
            feasible: report.overall && !candidate.status.is_flagged(),
            trajectory: Some(candidate.trajectory.clone()),
            status: Some(candidate.status),
            report: Some(report),
            candidate: Some(candidate),
            error: None,
        },
        Err(e) => Probe {
            status: Some(candidate.status),
            candidate: Some(candidate),
            error: Some(e.to_string()),
            ..Probe::verdict(false)
        },
    }
}

/// Detects the time to collision of the reference and runs the bisection
/// with the repair planner. `request.t_rep` is ignored.
pub fn search(
    request: &RepairRequest,
    config: &SearchConfig,
    cancel: Option<&AtomicBool>,
) -> Result<FttrResult, RepairError> {
    config.validate().map_err(RepairError::InvalidRequest)?;
    let started = Instant::now();
    let ttc = detect_collision(&request.reference, &request.obstacles, config.collision_check_dt)?;
    Ok(binary_search(
        &request.reference,
        ttc,
        config,
        cancel,
        started,
        |t_rep| probe_planner(request, t_rep, config.collision_check_dt),
    ))
}

/// Full search on a loaded scenario.
pub fn run_pipeline(scenario: &Scenario) -> Result<FttrResult, RepairError> {
    let result = search(&scenario.request(), &scenario.search, None)?;
    for it in &result.iterations {
        log::debug!(
            "t_rep {:.4} feasible {} bracket [{:.4}, {:.4}] {:.2} ms",
            it.t_rep,
            it.feasible,
            it.t_start,
            it.t_end,
            it.elapsed_s * 1e3
        );
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bspline::FrenetPoint;
    use crate::cspace::{Rect, VehicleParams};

    fn straight(speed: f64) -> UniformBSpline {
        let q = (0..60)
            .map(|i| FrenetPoint::new(speed * (i as f64 - 1.0) * 0.1, 0.0))
            .collect();
        UniformBSpline::new(3, q, 0.1, 0.0).unwrap()
    }

    fn limits() -> VehicleLimits {
        let vehicle = VehicleParams {
            wheelbase: 2.578,
            max_steering: 0.91,
            width: 1.674,
            length: 4.298,
        };
        VehicleLimits::new(20.0, 6.0, 30.0, &vehicle)
    }

    #[test]
    fn straight_line_is_feasible() {
        let r = is_feasible(&straight(10.0), &[], &limits(), 0.05).unwrap();
        assert!(r.overall);
        assert!((r.velocity_ratio - 0.5).abs() < 1e-9);
        assert_eq!(r.max_curvature, 0.0);
    }

    #[test]
    fn obstacle_on_path_is_reported() {
        let block = ObstaclePrediction::new_static("b", Rect::new(FrenetPoint::new(30.0, 0.0), 1.0, 1.0));
        let r = is_feasible(&straight(10.0), &[block], &limits(), 0.05).unwrap();
        assert!(!r.collision_free && !r.overall);
        let t = r.first_collision.unwrap();
        assert!((t - 2.9).abs() <= 0.05 + 1e-9);
        assert_eq!(r.collision_obstacle.as_deref(), Some("b"));
    }

    #[test]
    fn tight_arc_violates_curvature() {
        // arc of radius 2 m at 2 m/s sampled into a spline
        let radius = 2.0;
        let points: Vec<(f64, FrenetPoint)> = (0..=80)
            .map(|k| {
                let t = k as f64 * 0.05;
                let phi = t; // speed / radius = 1 rad/s
                (t, FrenetPoint::new(radius * phi.sin(), radius * (1.0 - phi.cos())))
            })
            .collect();
        let arc = crate::bspline::fit_through(&points, 3, 0.1).unwrap().spline;
        let r = is_feasible(&arc, &[], &limits(), 0.05).unwrap();
        assert!(limits().kappa_max < 1.0 / radius);
        assert!((r.max_curvature - 0.5).abs() < 0.02, "{}", r.max_curvature);
        assert!(!r.curvature_ok && !r.overall);
    }

    #[test]
    fn degenerate_branches_make_no_calls() {
        let reference = straight(10.0);
        for ttc in [0.0, f64::INFINITY] {
            let mut calls = 0;
            let r = binary_search(&reference, ttc, &SearchConfig::default(), None, Instant::now(), |_| {
                calls += 1;
                Probe::verdict(true)
            });
            assert_eq!(calls, 0);
            assert_eq!(r.f_ttr, ttc);
            assert_eq!(r.terminated_by, Termination::DegenerateBranch);
            assert_eq!(r.gamma, reference);
        }
    }

    #[test]
    fn step_threshold_is_bracketed() {
        let reference = straight(10.0);
        let r = binary_search(&reference, 2.9, &SearchConfig::default(), None, Instant::now(), |t| {
            Probe::verdict(t <= 1.7)
        });
        assert!(r.planner_calls() <= 4, "{} calls", r.planner_calls());
        assert!((r.f_ttr - 1.7).abs() <= 0.4);
        assert_eq!(r.terminated_by, Termination::Resolution);
        assert_eq!(r.iterations[0].t_rep, 0.0);
    }

    #[test]
    fn cancellation_stops_before_first_call() {
        let flag = AtomicBool::new(true);
        let r = binary_search(
            &straight(10.0),
            2.9,
            &SearchConfig::default(),
            Some(&flag),
            Instant::now(),
            |_| Probe::verdict(true),
        );
        assert_eq!(r.terminated_by, Termination::Cancelled);
        assert!(r.iterations.is_empty() && r.unresolved);
    }
}
