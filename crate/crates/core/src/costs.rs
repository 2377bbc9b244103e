//! Penalty terms for trajectory deformation and refinement, each with its
//! analytic gradient with respect to the spline control points.
//!
//! Every term returns one gradient entry per control point of the spline it
//! was evaluated on. Entries outside the `free` index range are zeroed so
//! frozen control points never move.

use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bspline::{FrenetPoint, UniformBSpline};
use crate::cspace::{obstacle_distance, AnchorPair};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("invalid cost weights: {0}")]
    InvalidWeights(String),
    #[error("invalid feasibility shape: {0}")]
    InvalidShape(String),
}

/// Weights of the deformation objective `λs·Js + λc·Jc + λd·Jd`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeformationWeights {
    pub lambda_s: f64,
    pub lambda_c: f64,
    pub lambda_d: f64,
}

/// Weights of the refinement objective `λs·Js + λd·Jd + λf·Jf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefinementWeights {
    pub lambda_s: f64,
    pub lambda_d: f64,
    pub lambda_f: f64,
}

/// Shape of the curve-fitting term used during refinement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitWeights {
    /// Weight of the displacement along the reference tangent.
    pub axial: f64,
    /// Weight of the displacement across the reference tangent.
    pub radial: f64,
    /// Number of matched samples, including both ends.
    pub samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostWeights {
    pub deformation: DeformationWeights,
    pub refinement: RefinementWeights,
    pub w_v: f64,
    pub w_a: f64,
    pub w_j: f64,
    /// Clearance threshold of the collision penalty (m).
    #[serde(rename = "s_f_m")]
    pub s_f: f64,
    pub fit: FitWeights,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            deformation: DeformationWeights {
                lambda_s: 1.0,
                lambda_c: 15.0,
                lambda_d: 1.0,
            },
            refinement: RefinementWeights {
                lambda_s: 1.0,
                lambda_d: 1.0,
                lambda_f: 0.01,
            },
            w_v: 1.0,
            w_a: 1.0,
            w_j: 1.0,
            s_f: 1.0,
            fit: FitWeights {
                axial: 1000.0,
                radial: 10000.0,
                samples: 32,
            },
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<(), CostError> {
        let named = [
            ("deformation.lambda_s", self.deformation.lambda_s),
            ("deformation.lambda_c", self.deformation.lambda_c),
            ("deformation.lambda_d", self.deformation.lambda_d),
            ("refinement.lambda_s", self.refinement.lambda_s),
            ("refinement.lambda_d", self.refinement.lambda_d),
            ("refinement.lambda_f", self.refinement.lambda_f),
            ("w_v", self.w_v),
            ("w_a", self.w_a),
            ("w_j", self.w_j),
            ("fit.axial", self.fit.axial),
            ("fit.radial", self.fit.radial),
        ];
        for (name, value) in named {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(CostError::InvalidWeights(format!(
                    "{name} must be finite and >= 0, got {value}"
                )));
            }
        }
        if !(self.s_f > 0.0) || !self.s_f.is_finite() {
            return Err(CostError::InvalidWeights(format!("s_f must be > 0, got {}", self.s_f)));
        }
        if self.fit.samples < 2 {
            return Err(CostError::InvalidWeights("fit.samples must be >= 2".into()));
        }
        Ok(())
    }
}

/// Tunables from which the per-order penalty shapes are derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShapeParams {
    /// Fraction of the limit below which the penalty is zero.
    pub elastic: f64,
    pub epsilon: f64,
    /// Quadratic tail starts at `transition_factor * limit`.
    pub transition_factor: f64,
}

impl Default for ShapeParams {
    fn default() -> Self {
        Self {
            elastic: 0.95,
            epsilon: 0.04,
            transition_factor: 1.2,
        }
    }
}

/// Even, C² piecewise penalty on one derivative component:
/// zero on `[-λ·c_m, λ·c_m]`, cubic up to `±c_j`, quadratic beyond.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyShape {
    pub limit: f64,
    pub transition: f64,
    pub elastic: f64,
    // quadratic tail a·x² + b·x + c for x >= transition
    quad_a: f64,
    quad_b: f64,
    quad_c: f64,
}

impl PenaltyShape {
    pub fn new(limit: f64, transition: f64, elastic: f64) -> Result<Self, CostError> {
        if !(limit > 0.0) || !limit.is_finite() {
            return Err(CostError::InvalidShape(format!("limit must be > 0, got {limit}")));
        }
        if !(elastic > 0.0 && elastic < 1.0) {
            return Err(CostError::InvalidShape(format!(
                "elastic coefficient must lie in (0, 1), got {elastic}"
            )));
        }
        let knee = elastic * limit;
        if !(transition > knee) {
            return Err(CostError::InvalidShape(format!(
                "transition {transition} must exceed elastic * limit = {knee}"
            )));
        }
        let h = transition - knee;
        // match value h³, slope 3h² and curvature 6h of the cubic at the transition
        let quad_a = 3.0 * h;
        let quad_b = 3.0 * h * h - 2.0 * quad_a * transition;
        let quad_c = h * h * h - quad_a * transition * transition - quad_b * transition;
        Ok(Self {
            limit,
            transition,
            elastic,
            quad_a,
            quad_b,
            quad_c,
        })
    }

    /// `(a1, b1, c1, a2, b2, c2)`: the quadratic tails for `x <= -c_j` and
    /// `x >= c_j`.
    pub fn coefficients(&self) -> (f64, f64, f64, f64, f64, f64) {
        (
            self.quad_a,
            -self.quad_b,
            self.quad_c,
            self.quad_a,
            self.quad_b,
            self.quad_c,
        )
    }

    /// Value, first and second derivative at `x`.
    pub fn eval(&self, x: f64) -> (f64, f64, f64) {
        let sign = if x < 0.0 { -1.0 } else { 1.0 };
        let y = x.abs();
        let knee = self.elastic * self.limit;
        let (v, d1, d2) = if y <= knee {
            (0.0, 0.0, 0.0)
        } else if y < self.transition {
            let e = y - knee;
            (e * e * e, 3.0 * e * e, 6.0 * e)
        } else {
            (
                self.quad_a * y * y + self.quad_b * y + self.quad_c,
                2.0 * self.quad_a * y + self.quad_b,
                2.0 * self.quad_a,
            )
        };
        (v, sign * d1, d2)
    }

    pub fn value(&self, x: f64) -> f64 {
        self.eval(x).0
    }
}

/// Penalty shapes for velocity, acceleration and jerk components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityShape {
    pub velocity: PenaltyShape,
    pub acceleration: PenaltyShape,
    pub jerk: PenaltyShape,
    pub params: ShapeParams,
}

impl FeasibilityShape {
    pub fn new(v_max: f64, a_max: f64, j_max: f64, params: ShapeParams) -> Result<Self, CostError> {
        if !(params.epsilon > 0.0 && params.epsilon < 1.0) {
            return Err(CostError::InvalidShape(format!(
                "epsilon must lie in (0, 1), got {}",
                params.epsilon
            )));
        }
        if !(params.elastic > 0.0 && params.elastic < 1.0 - params.epsilon) {
            return Err(CostError::InvalidShape(format!(
                "elastic coefficient {} must lie in (0, 1 - epsilon = {})",
                params.elastic,
                1.0 - params.epsilon
            )));
        }
        let shape = |limit: f64| PenaltyShape::new(limit, params.transition_factor * limit, params.elastic);
        Ok(Self {
            velocity: shape(v_max)?,
            acceleration: shape(a_max)?,
            jerk: shape(j_max)?,
            params,
        })
    }

    fn for_order(&self, order: usize) -> &PenaltyShape {
        match order {
            1 => &self.velocity,
            2 => &self.acceleration,
            _ => &self.jerk,
        }
    }
}

/// Value and per-control-point gradient of one penalty term.
#[derive(Debug, Clone, PartialEq)]
pub struct CostTerm {
    pub value: f64,
    pub gradient: Vec<FrenetPoint>,
}

impl CostTerm {
    fn zeros(n: usize) -> Self {
        Self {
            value: 0.0,
            gradient: vec![FrenetPoint::ZERO; n],
        }
    }

    fn mask(mut self, free: &Range<usize>) -> Self {
        for (i, g) in self.gradient.iter_mut().enumerate() {
            if !free.contains(&i) {
                *g = FrenetPoint::ZERO;
            }
        }
        self
    }
}

/// Forward-difference stencil producing the `order`-th derivative control
/// points (before division by `dt^order`).
fn stencil(order: usize) -> &'static [f64] {
    match order {
        1 => &[-1.0, 1.0],
        2 => &[1.0, -2.0, 1.0],
        3 => &[-1.0, 3.0, -3.0, 1.0],
        _ => panic!("unsupported derivative order {order}"),
    }
}

fn derivative_points(q: &[FrenetPoint], order: usize, dt: f64) -> Vec<FrenetPoint> {
    let coef = stencil(order);
    let scale = dt.powi(order as i32);
    if q.len() < coef.len() {
        return Vec::new();
    }
    (0..=q.len() - coef.len())
        .map(|i| {
            coef.iter()
                .enumerate()
                .fold(FrenetPoint::ZERO, |acc, (m, c)| acc + q[i + m] * *c)
                / scale
        })
        .collect()
}

/// Adds `dcost/dD_i` for derivative control points `D` back onto the
/// control-point gradient.
fn scatter(grad: &mut [FrenetPoint], order: usize, dt: f64, d_grad: &[FrenetPoint]) {
    let coef = stencil(order);
    let scale = dt.powi(order as i32);
    for (i, g) in d_grad.iter().enumerate() {
        for (m, c) in coef.iter().enumerate() {
            grad[i + m] += *g * (*c / scale);
        }
    }
}

/// `Js = Σ‖A_i‖² + Σ‖J_i‖²` over the acceleration and jerk control points.
pub fn smoothness_cost(spline: &UniformBSpline, free: Range<usize>) -> CostTerm {
    let q = spline.control_points();
    let dt = spline.knot_interval();
    let mut term = CostTerm::zeros(q.len());
    for order in [2, 3] {
        let d = derivative_points(q, order, dt);
        term.value += d.iter().map(|x| x.norm_squared()).sum::<f64>();
        let dg: Vec<FrenetPoint> = d.iter().map(|x| *x * 2.0).collect();
        scatter(&mut term.gradient, order, dt, &dg);
    }
    term.mask(&free)
}

/// Hessian of `Js` restricted to the `free` control points, for one
/// coordinate (the `s` and `l` parts are identical and decoupled).
pub fn smoothness_hessian(n: usize, dt: f64, free: Range<usize>) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(free.len(), free.len());
    for order in [2, 3] {
        let coef = stencil(order);
        let scale = dt.powi(order as i32).powi(2);
        if n < coef.len() {
            continue;
        }
        for i in 0..=n - coef.len() {
            for (a, ca) in coef.iter().enumerate() {
                for (b, cb) in coef.iter().enumerate() {
                    let (ia, ib) = (i + a, i + b);
                    if free.contains(&ia) && free.contains(&ib) {
                        h[(ia - free.start, ib - free.start)] += 2.0 * ca * cb / scale;
                    }
                }
            }
        }
    }
    h
}

/// Collision penalty of one anchor pair as a function of
/// `c = s_f - d`: zero for `c <= 0`, `c³` up to `s_f`, and the quadratic
/// continuation `3·s_f·c² - 3·s_f²·c + s_f³` beyond. Returns value, first
/// and second derivative with respect to `c`.
pub fn collision_penalty(c: f64, s_f: f64) -> (f64, f64, f64) {
    if c <= 0.0 {
        (0.0, 0.0, 0.0)
    } else if c <= s_f {
        (c * c * c, 3.0 * c * c, 6.0 * c)
    } else {
        (
            3.0 * s_f * c * c - 3.0 * s_f * s_f * c + s_f * s_f * s_f,
            6.0 * s_f * c - 3.0 * s_f * s_f,
            6.0 * s_f,
        )
    }
}

/// `Jc`: one penalty per anchor pair, summed.
pub fn collision_cost(controls: &[FrenetPoint], pairs: &[AnchorPair], s_f: f64, free: Range<usize>) -> CostTerm {
    let mut term = CostTerm::zeros(controls.len());
    for pair in pairs {
        let Some(q) = controls.get(pair.control_index) else {
            continue;
        };
        let c = s_f - obstacle_distance(*q, pair);
        let (v, d1, _) = collision_penalty(c, s_f);
        term.value += v;
        // dc/dQ = -v_ij
        term.gradient[pair.control_index] -= pair.v * d1;
    }
    term.mask(&free)
}

/// `Jd = Σ w_v F(V_i) + Σ w_a F(A_i) + Σ w_j F(J_i)` with `F` summing the
/// component penalties over `s` and `l`.
pub fn feasibility_cost(
    spline: &UniformBSpline,
    shape: &FeasibilityShape,
    weights: &CostWeights,
    free: Range<usize>,
) -> CostTerm {
    let q = spline.control_points();
    let dt = spline.knot_interval();
    let mut term = CostTerm::zeros(q.len());
    for (order, w) in [(1, weights.w_v), (2, weights.w_a), (3, weights.w_j)] {
        if w == 0.0 {
            continue;
        }
        let penalty = shape.for_order(order);
        let d = derivative_points(q, order, dt);
        let mut dg = Vec::with_capacity(d.len());
        for x in &d {
            let (vs, gs, _) = penalty.eval(x.s);
            let (vl, gl, _) = penalty.eval(x.l);
            term.value += w * (vs + vl);
            dg.push(FrenetPoint::new(w * gs, w * gl));
        }
        scatter(&mut term.gradient, order, dt, &dg);
    }
    term.mask(&free)
}

/// Reference samples for the fitting term, precomputed once per refinement.
#[derive(Debug, Clone)]
pub struct FitTarget {
    alphas: Vec<f64>,
    points: Vec<FrenetPoint>,
    tangents: Vec<Option<FrenetPoint>>,
}

impl FitTarget {
    pub fn new(reference: &UniformBSpline, samples: usize) -> Self {
        let samples = samples.max(2);
        let velocity = reference.derivative(1).ok();
        let alphas: Vec<f64> = (0..samples).map(|k| k as f64 / (samples - 1) as f64).collect();
        let mut points = Vec::with_capacity(samples);
        let mut tangents = Vec::with_capacity(samples);
        for &alpha in &alphas {
            let t = alpha_time(reference, alpha);
            points.push(reference.evaluate(t).expect("alpha time inside domain"));
            tangents.push(
                velocity
                    .as_ref()
                    .and_then(|v| v.evaluate(t).ok())
                    .and_then(|v| v.normalized()),
            );
        }
        Self {
            alphas,
            points,
            tangents,
        }
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    /// Anisotropic squared displacement between `candidate(α·T')` and the
    /// reference at `α·T`.
    pub fn cost(&self, candidate: &UniformBSpline, axial: f64, radial: f64, free: Range<usize>) -> CostTerm {
        let q = candidate.control_points();
        let mut term = CostTerm::zeros(q.len());
        for ((alpha, target), tangent) in self.alphas.iter().zip(&self.points).zip(&self.tangents) {
            let t = alpha_time(candidate, *alpha);
            let (first, weights) = candidate.active_basis(t).expect("alpha time inside domain");
            let point = weights
                .iter()
                .zip(&q[first..])
                .fold(FrenetPoint::ZERO, |acc, (w, p)| acc + *p * *w);
            let delta = point - *target;
            let dpoint = match tangent {
                Some(tau) => {
                    let normal = tau.perp();
                    let da = delta.dot(*tau);
                    let dr = delta.dot(normal);
                    term.value += axial * da * da + radial * dr * dr;
                    *tau * (2.0 * axial * da) + normal * (2.0 * radial * dr)
                }
                None => {
                    let w = 0.5 * (axial + radial);
                    term.value += w * delta.norm_squared();
                    delta * (2.0 * w)
                }
            };
            for (k, w) in weights.iter().enumerate() {
                term.gradient[first + k] += dpoint * *w;
            }
        }
        term.mask(&free)
    }
}

impl FitTarget {
    /// Constant Hessian of [`FitTarget::cost`] with respect to the free
    /// control points of `candidate`, with coordinates interleaved as
    /// `(s_0, l_0, s_1, l_1, ...)`.
    pub fn hessian(&self, candidate: &UniformBSpline, axial: f64, radial: f64, free: Range<usize>) -> DMatrix<f64> {
        let dim = 2 * free.len();
        let mut h = DMatrix::zeros(dim, dim);
        for (alpha, tangent) in self.alphas.iter().zip(&self.tangents) {
            let t = alpha_time(candidate, *alpha);
            let (first, weights) = candidate.active_basis(t).expect("alpha time inside domain");
            // 2x2 block of the quadratic form in the displacement
            let block = match tangent {
                Some(tau) => {
                    let n = tau.perp();
                    [
                        [
                            2.0 * (axial * tau.s * tau.s + radial * n.s * n.s),
                            2.0 * (axial * tau.s * tau.l + radial * n.s * n.l),
                        ],
                        [
                            2.0 * (axial * tau.l * tau.s + radial * n.l * n.s),
                            2.0 * (axial * tau.l * tau.l + radial * n.l * n.l),
                        ],
                    ]
                }
                None => {
                    let w = axial + radial;
                    [[w, 0.0], [0.0, w]]
                }
            };
            for (a, wa) in weights.iter().enumerate() {
                for (b, wb) in weights.iter().enumerate() {
                    let (ia, ib) = (first + a, first + b);
                    if !(free.contains(&ia) && free.contains(&ib)) {
                        continue;
                    }
                    let (ra, rb) = (2 * (ia - free.start), 2 * (ib - free.start));
                    for u in 0..2 {
                        for v in 0..2 {
                            h[(ra + u, rb + v)] += wa * wb * block[u][v];
                        }
                    }
                }
            }
        }
        h
    }
}

fn alpha_time(spline: &UniformBSpline, alpha: f64) -> f64 {
    if alpha >= 1.0 {
        spline.t_end()
    } else {
        spline.t_start() + alpha * spline.duration()
    }
}

/// `Jf` between a candidate and the curve it should follow.
pub fn fitting_cost(
    candidate: &UniformBSpline,
    reference: &UniformBSpline,
    samples: usize,
    axial_weight: f64,
    radial_weight: f64,
    free: Range<usize>,
) -> CostTerm {
    FitTarget::new(reference, samples).cost(candidate, axial_weight, radial_weight, free)
}

/// Weighted objective value with its per-term parts and combined gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct CostBreakdown {
    pub total: f64,
    pub smoothness: f64,
    pub collision: f64,
    pub feasibility: f64,
    pub fitting: f64,
    pub gradient: Vec<FrenetPoint>,
}

fn combine(n: usize, terms: &[(f64, &CostTerm)]) -> (f64, Vec<FrenetPoint>) {
    let mut total = 0.0;
    let mut gradient = vec![FrenetPoint::ZERO; n];
    for (w, term) in terms {
        total += w * term.value;
        for (g, t) in gradient.iter_mut().zip(&term.gradient) {
            *g += *t * *w;
        }
    }
    (total, gradient)
}

pub struct DeformationContext<'a> {
    pub pairs: &'a [AnchorPair],
    pub weights: &'a CostWeights,
    pub shape: &'a FeasibilityShape,
    pub free: Range<usize>,
}

pub fn total_deformation_cost(spline: &UniformBSpline, ctx: &DeformationContext<'_>) -> CostBreakdown {
    let w = &ctx.weights.deformation;
    let js = smoothness_cost(spline, ctx.free.clone());
    let jc = collision_cost(spline.control_points(), ctx.pairs, ctx.weights.s_f, ctx.free.clone());
    let jd = feasibility_cost(spline, ctx.shape, ctx.weights, ctx.free.clone());
    let (total, gradient) = combine(spline.len(), &[(w.lambda_s, &js), (w.lambda_c, &jc), (w.lambda_d, &jd)]);
    CostBreakdown {
        total,
        smoothness: js.value,
        collision: jc.value,
        feasibility: jd.value,
        fitting: 0.0,
        gradient,
    }
}

pub struct RefinementContext<'a> {
    pub target: &'a FitTarget,
    pub weights: &'a CostWeights,
    pub shape: &'a FeasibilityShape,
    pub free: Range<usize>,
}

pub fn total_refinement_cost(spline: &UniformBSpline, ctx: &RefinementContext<'_>) -> CostBreakdown {
    let w = &ctx.weights.refinement;
    let js = smoothness_cost(spline, ctx.free.clone());
    let jd = feasibility_cost(spline, ctx.shape, ctx.weights, ctx.free.clone());
    let jf = ctx
        .target
        .cost(spline, ctx.weights.fit.axial, ctx.weights.fit.radial, ctx.free.clone());
    let (total, gradient) = combine(spline.len(), &[(w.lambda_s, &js), (w.lambda_d, &jd), (w.lambda_f, &jf)]);
    CostBreakdown {
        total,
        smoothness: js.value,
        collision: 0.0,
        feasibility: jd.value,
        fitting: jf.value,
        gradient,
    }
}
