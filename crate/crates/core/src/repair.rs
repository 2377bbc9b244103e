//! The repair planner: keeps the reference up to the repair time, deforms the
//! remainder away from obstacles, rescales its duration when it exceeds the
//! vehicle limits, and refines it for smoothness and feasibility.

use std::ops::Range;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bspline::{fit_control_points, FrenetPoint, SplineError, UniformBSpline};
use crate::costs::{
    smoothness_hessian, total_deformation_cost, total_refinement_cost, CostError, CostWeights, DeformationContext,
    FeasibilityShape, FitTarget, RefinementContext,
};
use crate::cspace::{
    anchor_pairs, colliding_samples, obstacle_distance, AnchorPair, ControlConflict, CspaceError, ObstaclePrediction,
    VehicleParams,
};
use crate::optimizer::{minimize_preconditioned, OptimizeOutcome, OptimizerConfig, OptimizerError, Termination};

const JUNCTION_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum RepairError {
    #[error("invalid repair request: {0}")]
    InvalidRequest(String),
    #[error("stitch failed: {0}")]
    Stitch(String),
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error(transparent)]
    Cspace(#[from] CspaceError),
    #[error(transparent)]
    Cost(#[from] CostError),
}

/// Physical bounds a repaired trajectory must respect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleLimits {
    pub v_max: f64,
    pub a_max: f64,
    pub j_max: f64,
    pub kappa_max: f64,
}

impl VehicleLimits {
    pub fn new(v_max: f64, a_max: f64, j_max: f64, vehicle: &VehicleParams) -> Self {
        Self {
            v_max,
            a_max,
            j_max,
            kappa_max: vehicle.max_curvature(),
        }
    }

    pub fn validate(&self) -> Result<(), RepairError> {
        for (name, value) in [
            ("v_max", self.v_max),
            ("a_max", self.a_max),
            ("j_max", self.j_max),
            ("kappa_max", self.kappa_max),
        ] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(RepairError::InvalidRequest(format!(
                    "limits.{name} must be finite and > 0, got {value}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepairSettings {
    pub optimizer: OptimizerConfig,
    /// Sampling step for the collision checks inside the planner (s).
    pub collision_check_dt: f64,
    /// Extra deformation solves with refreshed anchor pairs when the first
    /// one still collides.
    pub anchor_regenerations: usize,
}

impl Default for RepairSettings {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::default(),
            collision_check_dt: 0.05,
            anchor_regenerations: 3,
        }
    }
}

/// Everything the planner needs for one repair attempt.
#[derive(Debug, Clone)]
pub struct RepairRequest {
    pub reference: UniformBSpline,
    pub obstacles: Vec<ObstaclePrediction>,
    pub vehicle: VehicleParams,
    pub limits: VehicleLimits,
    pub weights: CostWeights,
    pub shape: FeasibilityShape,
    pub settings: RepairSettings,
    /// Absolute repair start time (s).
    pub t_rep: f64,
}

impl RepairRequest {
    pub fn with_t_rep(&self, t_rep: f64) -> Self {
        Self { t_rep, ..self.clone() }
    }

    pub fn validate(&self) -> Result<(), RepairError> {
        let (t0, th) = (self.reference.t_start(), self.reference.t_end());
        if !(self.t_rep >= t0 && self.t_rep < th) {
            return Err(RepairError::InvalidRequest(format!(
                "t_rep {} must lie in [{t0}, {th})",
                self.t_rep
            )));
        }
        if self.reference.degree() < 3 {
            return Err(RepairError::InvalidRequest(
                "reference degree must be at least 3".into(),
            ));
        }
        if !(self.settings.collision_check_dt > 0.0) {
            return Err(RepairError::InvalidRequest("collision_check_dt must be > 0".into()));
        }
        self.limits.validate()?;
        self.weights.validate()?;
        self.vehicle.validate()?;
        for obs in &self.obstacles {
            obs.validate()?;
        }
        self.settings
            .optimizer
            .validate()
            .map_err(|e| RepairError::InvalidRequest(e.to_string()))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateStatus {
    /// The reference after the repair time was already collision-free.
    Unchanged,
    Repaired,
    /// The repair time leaves no control point to move.
    NoFreeControlPoints,
    /// Deformation still collides after all anchor regenerations.
    UnresolvedCollision,
    /// An optimization produced a non-finite cost or gradient.
    OptimizerFailure,
}

impl CandidateStatus {
    pub fn is_flagged(self) -> bool {
        matches!(
            self,
            Self::NoFreeControlPoints | Self::UnresolvedCollision | Self::OptimizerFailure
        )
    }
}

#[derive(Debug, Clone)]
pub struct RepairCandidate {
    /// Full-horizon trajectory: reference prefix followed by the repair.
    pub trajectory: UniformBSpline,
    pub t_rep: f64,
    /// Knot time at which the repaired part takes over (first knot at or
    /// after `t_rep`).
    pub junction_time: f64,
    /// Deformed suffix before time rescaling.
    pub deformed: UniformBSpline,
    /// Refined suffix.
    pub refined: UniformBSpline,
    pub deformation: Vec<OptimizeOutcome>,
    pub refinement: Option<OptimizeOutcome>,
    pub anchor_pairs: Vec<AnchorPair>,
    /// Ratio of the refined to the deformed suffix duration.
    pub duration_scale: f64,
    pub status: CandidateStatus,
}

/// Index of the first reference knot at or after `t_rep`, as a knot index
/// (the domain starts at knot `degree`).
fn junction_knot(reference: &UniformBSpline, t_rep: f64) -> usize {
    let offset = (t_rep - reference.t_start()) / reference.knot_interval();
    reference.degree() + (offset - 1e-9).ceil().max(0.0) as usize
}

fn flatten(points: &[FrenetPoint]) -> Vec<f64> {
    points.iter().flat_map(|p| [p.s, p.l]).collect()
}

fn with_free(template: &UniformBSpline, fixed: usize, x: &[f64]) -> UniformBSpline {
    let mut q = template.control_points()[..fixed].to_vec();
    q.extend(x.chunks_exact(2).map(|c| FrenetPoint::new(c[0], c[1])));
    template.with_control_points(q).expect("control point count unchanged")
}

fn free_gradient(gradient: &[FrenetPoint], free: &Range<usize>) -> Vec<f64> {
    flatten(&gradient[free.clone()])
}

/// `λs` times the smoothness Hessian on interleaved `(s, l)` coordinates.
fn smoothness_block(spline: &UniformBSpline, free: &Range<usize>, lambda_s: f64) -> DMatrix<f64> {
    let hs = smoothness_hessian(spline.len(), spline.knot_interval(), free.clone());
    let mut h = DMatrix::zeros(2 * free.len(), 2 * free.len());
    for i in 0..free.len() {
        for j in 0..free.len() {
            h[(2 * i, 2 * j)] = lambda_s * hs[(i, j)];
            h[(2 * i + 1, 2 * j + 1)] = lambda_s * hs[(i, j)];
        }
    }
    h
}

/// Factorizes the Hessian of the quadratic cost terms for use as the
/// initial inverse Hessian of the solver.
fn factorize(mut h: DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let scale = h.diagonal().amax();
    if !(scale > 0.0) {
        return None;
    }
    for i in 0..h.nrows() {
        h[(i, i)] += 1e-9 * scale;
    }
    h.cholesky()
}

fn solve_with(factor: &Option<Cholesky<f64, Dyn>>, g: &[f64]) -> Vec<f64> {
    match factor {
        Some(c) => c.solve(&DVector::from_column_slice(g)).as_slice().to_vec(),
        None => g.to_vec(),
    }
}

/// Control points that must move: those lying inside an obstacle at their
/// Greville time, and the free active control points of every colliding
/// curve sample. Sample conflicts carry the curve point, so their anchor is
/// the obstacle face nearest to the curve and all control points shaping
/// that sample are pushed the same way.
fn collect_conflicts(
    spline: &UniformBSpline,
    obstacles: &[ObstaclePrediction],
    free: &Range<usize>,
    dt: f64,
) -> Result<Vec<ControlConflict>, RepairError> {
    let q = spline.control_points();
    let mut out: Vec<ControlConflict> = Vec::new();
    let mut push = |c: ControlConflict| {
        if !out
            .iter()
            .any(|o| o.control_index == c.control_index && o.obstacle == c.obstacle)
        {
            out.push(c);
        }
    };
    for i in free.clone() {
        let tg = spline.greville(i);
        for (j, obs) in obstacles.iter().enumerate() {
            if obs.rect_at(tg).is_some_and(|r| r.contains(q[i])) {
                push(ControlConflict {
                    control_index: i,
                    point: q[i],
                    obstacle: j,
                    time: tg,
                });
            }
        }
    }
    for (t, j) in colliding_samples(spline, obstacles, dt)? {
        let point = spline.evaluate(t)?;
        let (first, _) = spline.active_basis(t)?;
        for i in first..=first + spline.degree() {
            if free.contains(&i) {
                push(ControlConflict {
                    control_index: i,
                    point,
                    obstacle: j,
                    time: t,
                });
            }
        }
    }
    Ok(out)
}

/// Joins the reference prefix with a repaired suffix whose first `degree`
/// control points coincide with reference control points.
pub fn stitch(reference: &UniformBSpline, suffix: &UniformBSpline, t_rep: f64) -> Result<UniformBSpline, RepairError> {
    let p = reference.degree();
    if suffix.degree() != p || suffix.knot_interval() != reference.knot_interval() {
        return Err(RepairError::Stitch(
            "suffix degree and knot interval must match the reference".into(),
        ));
    }
    let offset = (suffix.t_start() - reference.t_start()) / reference.knot_interval();
    let rounded = offset.round();
    if (offset - rounded).abs() > 1e-6 || rounded < 0.0 {
        return Err(RepairError::Stitch(format!(
            "suffix start {} is not a reference knot",
            suffix.t_start()
        )));
    }
    if suffix.t_start() + 1e-9 < t_rep {
        return Err(RepairError::Stitch(format!(
            "suffix starts at {} before t_rep {t_rep}",
            suffix.t_start()
        )));
    }
    let m = p + rounded as usize;
    if m > reference.len() {
        return Err(RepairError::Stitch("suffix starts beyond the reference".into()));
    }
    let shared = &reference.control_points()[m - p..m];
    for (a, b) in shared.iter().zip(suffix.control_points()) {
        if (*a - *b).norm() > JUNCTION_TOL {
            return Err(RepairError::Stitch(format!(
                "junction control points differ by {}",
                (*a - *b).norm()
            )));
        }
    }
    let mut q = reference.control_points()[..m].to_vec();
    q.extend_from_slice(&suffix.control_points()[p..]);
    Ok(UniformBSpline::new(
        p,
        q,
        reference.knot_interval(),
        reference.t_start(),
    )?)
}

/// Largest factor by which the suffix exceeds a limit, mapped to a duration
/// scale: velocity scales with `1/r`, acceleration with `1/r²` and jerk
/// with `1/r³`.
fn duration_ratio(spline: &UniformBSpline, limits: &VehicleLimits, dt: f64) -> Result<f64, RepairError> {
    let kin = spline.kinematics();
    let mut ratio: f64 = 1.0;
    for t in crate::bspline::sample_times(spline.t_start(), spline.t_end(), dt)? {
        let s = kin.at(t)?;
        ratio = ratio
            .max(s.velocity.norm() / limits.v_max)
            .max((s.acceleration.norm() / limits.a_max).sqrt())
            .max((s.jerk.norm() / limits.j_max).cbrt());
    }
    Ok(ratio)
}

/// Stretches `spline` in time by at least `ratio` keeping the knot interval
/// and the first `degree` control points. Returns the new spline and the
/// exact scale applied.
fn rescale(spline: &UniformBSpline, ratio: f64) -> Result<(UniformBSpline, f64), RepairError> {
    let p = spline.degree();
    let spans = spline.num_spans();
    let new_spans = ((spans as f64 * ratio) - 1e-9).ceil() as usize;
    if new_spans <= spans {
        return Ok((spline.clone(), 1.0));
    }
    let scale = new_spans as f64 / spans as f64;
    let t0 = spline.t_start();
    let dt = spline.knot_interval();
    let per_span = 4;
    let samples: Vec<(f64, FrenetPoint)> = (0..=new_spans * per_span)
        .map(|k| {
            let tau = t0 + k as f64 * dt / per_span as f64;
            let source = (t0 + (tau - t0) / scale).min(spline.t_end());
            Ok((tau, spline.evaluate(source)?))
        })
        .collect::<Result<_, SplineError>>()?;
    let fit = fit_control_points(&samples, p, dt, t0, new_spans + p, &spline.control_points()[..p])?;
    Ok((fit.spline, scale))
}

/// Plans one repair attempt at `request.t_rep`.
pub fn plan(request: &RepairRequest) -> Result<RepairCandidate, RepairError> {
    request.validate()?;
    let reference = &request.reference;
    let p = reference.degree();
    let n = reference.len();
    let m = junction_knot(reference, request.t_rep);
    let junction_time = reference.knot(m);
    let dt_check = request.settings.collision_check_dt;

    let unchanged = |status: CandidateStatus, suffix: UniformBSpline| RepairCandidate {
        trajectory: reference.clone(),
        t_rep: request.t_rep,
        junction_time,
        deformed: suffix.clone(),
        refined: suffix,
        deformation: Vec::new(),
        refinement: None,
        anchor_pairs: Vec::new(),
        duration_scale: 1.0,
        status,
    };

    if m >= n {
        return Ok(unchanged(CandidateStatus::NoFreeControlPoints, reference.clone()));
    }
    let suffix = UniformBSpline::new(
        p,
        reference.control_points()[m - p..].to_vec(),
        reference.knot_interval(),
        junction_time,
    )?;
    let free = p..suffix.len();

    if colliding_samples(&suffix, &request.obstacles, dt_check)?.is_empty() {
        return Ok(unchanged(CandidateStatus::Unchanged, suffix));
    }

    // deformation
    let mut pairs: Vec<AnchorPair> = Vec::new();
    let mut outcomes = Vec::new();
    let mut deformed = suffix.clone();
    let mut status = CandidateStatus::Repaired;
    for _round in 0..=request.settings.anchor_regenerations {
        let conflicts = collect_conflicts(&deformed, &request.obstacles, &free, dt_check)?;
        if conflicts.is_empty() && !pairs.is_empty() {
            break;
        }
        // a refreshed pair replaces an older one for the same control point
        // and obstacle when it asks for more clearance
        let q = deformed.control_points();
        for pair in anchor_pairs(&conflicts, &request.obstacles) {
            let existing = pairs
                .iter()
                .position(|o| o.control_index == pair.control_index && o.obstacle_id == pair.obstacle_id);
            match existing {
                None => pairs.push(pair),
                Some(k) => {
                    let qi = q[pair.control_index];
                    if obstacle_distance(qi, &pair) < obstacle_distance(qi, &pairs[k]) {
                        pairs[k] = pair;
                    }
                }
            }
        }
        let ctx = DeformationContext {
            pairs: &pairs,
            weights: &request.weights,
            shape: &request.shape,
            free: free.clone(),
        };
        let template = deformed.clone();
        let objective = |x: &[f64]| {
            let s = with_free(&template, p, x);
            let b = total_deformation_cost(&s, &ctx);
            (b.total, free_gradient(&b.gradient, &free))
        };
        let x0 = flatten(&deformed.control_points()[p..]);
        let factor = factorize(smoothness_block(&deformed, &free, request.weights.deformation.lambda_s));
        let precondition = |g: &[f64]| solve_with(&factor, g);
        match minimize_preconditioned(objective, &x0, &request.settings.optimizer, Some(&precondition)) {
            Ok(outcome) => {
                deformed = with_free(&template, p, &outcome.x);
                outcomes.push(outcome);
            }
            Err(OptimizerError::NonFinite { .. }) | Err(OptimizerError::DimensionMismatch { .. }) => {
                status = CandidateStatus::OptimizerFailure;
                break;
            }
            Err(e) => return Err(RepairError::InvalidRequest(e.to_string())),
        }
        if colliding_samples(&deformed, &request.obstacles, dt_check)?.is_empty() {
            break;
        }
    }
    if status == CandidateStatus::Repaired && !colliding_samples(&deformed, &request.obstacles, dt_check)?.is_empty() {
        status = CandidateStatus::UnresolvedCollision;
    }

    // time reallocation
    let ratio = duration_ratio(&deformed, &request.limits, dt_check)?;
    let (initial, duration_scale) = rescale(&deformed, ratio)?;

    // refinement
    let target = FitTarget::new(&deformed, request.weights.fit.samples);
    let refine_free = p..initial.len();
    let ctx = RefinementContext {
        target: &target,
        weights: &request.weights,
        shape: &request.shape,
        free: refine_free.clone(),
    };
    let objective = |x: &[f64]| {
        let s = with_free(&initial, p, x);
        let b = total_refinement_cost(&s, &ctx);
        (b.total, free_gradient(&b.gradient, &refine_free))
    };
    let x0 = flatten(&initial.control_points()[p..]);
    let mut h = smoothness_block(&initial, &refine_free, request.weights.refinement.lambda_s);
    h += target.hessian(
        &initial,
        request.weights.fit.axial,
        request.weights.fit.radial,
        refine_free.clone(),
    ) * request.weights.refinement.lambda_f;
    let factor = factorize(h);
    let precondition = |g: &[f64]| solve_with(&factor, g);
    let (refined, refinement) =
        match minimize_preconditioned(objective, &x0, &request.settings.optimizer, Some(&precondition)) {
            Ok(outcome) => (with_free(&initial, p, &outcome.x), Some(outcome)),
            Err(OptimizerError::InvalidConfig(e)) => return Err(RepairError::InvalidRequest(e)),
            Err(_) => {
                status = CandidateStatus::OptimizerFailure;
                (initial.clone(), None)
            }
        };

    let trajectory = stitch(reference, &refined, request.t_rep)?;
    Ok(RepairCandidate {
        trajectory,
        t_rep: request.t_rep,
        junction_time,
        deformed,
        refined,
        deformation: outcomes,
        refinement,
        anchor_pairs: pairs,
        duration_scale,
        status,
    })
}

impl RepairCandidate {
    pub fn deformation_iterations(&self) -> usize {
        self.deformation.iter().map(|o| o.iterations).sum()
    }

    pub fn refinement_iterations(&self) -> usize {
        self.refinement.as_ref().map_or(0, |o| o.iterations)
    }

    /// True when any optimization stopped on its iteration limit.
    pub fn hit_iteration_limit(&self) -> bool {
        self.deformation
            .iter()
            .chain(self.refinement.iter())
            .any(|o| o.termination == Termination::MaxIterations)
    }
}
