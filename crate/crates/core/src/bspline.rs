//! Uniform B-spline curves over Frenet-frame points.
//!
//! Knots are unclamped and equally spaced. For a curve of degree `p` with `N`
//! control points the knot vector has `N + p + 1` entries and knot `k` sits at
//! `t_start + (k - p) * knot_interval`, so the usable parameter domain is
//! `[t_start, t_start + (N - p) * knot_interval]` and the curve parameter is
//! absolute time in seconds.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slack used when deciding whether a time lies inside a spline domain.
pub const DOMAIN_EPS: f64 = 1e-9;

/// A point (or vector) in the Frenet frame: `s` along the road, `l` lateral.
///
/// Derivatives of positions (velocity, acceleration, jerk) reuse this type.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FrenetPoint {
    pub s: f64,
    pub l: f64,
}

impl FrenetPoint {
    pub const ZERO: FrenetPoint = FrenetPoint { s: 0.0, l: 0.0 };

    pub const fn new(s: f64, l: f64) -> Self {
        Self { s, l }
    }

    pub fn dot(self, other: FrenetPoint) -> f64 {
        self.s * other.s + self.l * other.l
    }

    /// z-component of the planar cross product.
    pub fn cross(self, other: FrenetPoint) -> f64 {
        self.s * other.l - self.l * other.s
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.s.is_finite() && self.l.is_finite()
    }

    /// Unit vector in the same direction, or `None` for (near) zero vectors.
    pub fn normalized(self) -> Option<FrenetPoint> {
        let n = self.norm();
        (n > 1e-12).then(|| self / n)
    }

    /// Counter-clockwise perpendicular.
    pub fn perp(self) -> FrenetPoint {
        FrenetPoint::new(-self.l, self.s)
    }

    pub fn max_abs_component(self) -> f64 {
        self.s.abs().max(self.l.abs())
    }
}

impl Add for FrenetPoint {
    type Output = FrenetPoint;
    fn add(self, rhs: FrenetPoint) -> FrenetPoint {
        FrenetPoint::new(self.s + rhs.s, self.l + rhs.l)
    }
}

impl Sub for FrenetPoint {
    type Output = FrenetPoint;
    fn sub(self, rhs: FrenetPoint) -> FrenetPoint {
        FrenetPoint::new(self.s - rhs.s, self.l - rhs.l)
    }
}

impl Mul<f64> for FrenetPoint {
    type Output = FrenetPoint;
    fn mul(self, rhs: f64) -> FrenetPoint {
        FrenetPoint::new(self.s * rhs, self.l * rhs)
    }
}

impl Mul<FrenetPoint> for f64 {
    type Output = FrenetPoint;
    fn mul(self, rhs: FrenetPoint) -> FrenetPoint {
        rhs * self
    }
}

impl Div<f64> for FrenetPoint {
    type Output = FrenetPoint;
    fn div(self, rhs: f64) -> FrenetPoint {
        FrenetPoint::new(self.s / rhs, self.l / rhs)
    }
}

impl Neg for FrenetPoint {
    type Output = FrenetPoint;
    fn neg(self) -> FrenetPoint {
        FrenetPoint::new(-self.s, -self.l)
    }
}

impl AddAssign for FrenetPoint {
    fn add_assign(&mut self, rhs: FrenetPoint) {
        self.s += rhs.s;
        self.l += rhs.l;
    }
}

impl SubAssign for FrenetPoint {
    fn sub_assign(&mut self, rhs: FrenetPoint) {
        self.s -= rhs.s;
        self.l -= rhs.l;
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplineError {
    #[error("basis index {index} out of range (degree {degree}, {knots} knots)")]
    IndexOutOfRange { index: usize, degree: usize, knots: usize },
    #[error("time {t} outside spline domain [{start}, {end}]")]
    OutsideDomain { t: f64, start: f64, end: f64 },
    #[error("derivative order {order} exceeds spline degree {degree}")]
    OrderExceedsDegree { order: usize, degree: usize },
    #[error("invalid spline: {0}")]
    Invalid(String),
    #[error("fit failed: {0}")]
    Fit(String),
}

/// Cox-de Boor recursion for `B_{i,p}(t)` over an arbitrary nondecreasing
/// knot vector. Terms of the form 0/0 evaluate to zero.
pub fn basis(i: usize, p: usize, t: f64, knots: &[f64]) -> Result<f64, SplineError> {
    if knots.len() < p + 2 || i + p + 2 > knots.len() {
        return Err(SplineError::IndexOutOfRange {
            index: i,
            degree: p,
            knots: knots.len(),
        });
    }
    Ok(cox_de_boor(i, p, t, knots))
}

fn cox_de_boor(i: usize, p: usize, t: f64, knots: &[f64]) -> f64 {
    if p == 0 {
        return if knots[i] <= t && t < knots[i + 1] { 1.0 } else { 0.0 };
    }
    let mut value = 0.0;
    let left_den = knots[i + p] - knots[i];
    if left_den != 0.0 {
        value += (t - knots[i]) / left_den * cox_de_boor(i, p - 1, t, knots);
    }
    let right_den = knots[i + p + 1] - knots[i + 1];
    if right_den != 0.0 {
        value += (knots[i + p + 1] - t) / right_den * cox_de_boor(i + 1, p - 1, t, knots);
    }
    value
}

/// Position, velocity, acceleration and jerk of a trajectory at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub position: FrenetPoint,
    pub velocity: FrenetPoint,
    pub acceleration: FrenetPoint,
    pub jerk: FrenetPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformBSpline {
    degree: usize,
    control_points: Vec<FrenetPoint>,
    knot_interval: f64,
    t_start: f64,
}

impl UniformBSpline {
    pub fn new(
        degree: usize,
        control_points: Vec<FrenetPoint>,
        knot_interval: f64,
        t_start: f64,
    ) -> Result<Self, SplineError> {
        if control_points.len() < degree + 1 {
            return Err(SplineError::Invalid(format!(
                "need at least {} control points for degree {degree}, got {}",
                degree + 1,
                control_points.len()
            )));
        }
        if !(knot_interval > 0.0) || !knot_interval.is_finite() {
            return Err(SplineError::Invalid(format!(
                "knot interval must be positive, got {knot_interval}"
            )));
        }
        if !t_start.is_finite() {
            return Err(SplineError::Invalid("t_start must be finite".into()));
        }
        if let Some(i) = control_points.iter().position(|q| !q.is_finite()) {
            return Err(SplineError::Invalid(format!("control point {i} is not finite")));
        }
        Ok(Self {
            degree,
            control_points,
            knot_interval,
            t_start,
        })
    }

    /// Same degree, knot interval and start time with new control points.
    pub fn with_control_points(&self, control_points: Vec<FrenetPoint>) -> Result<Self, SplineError> {
        Self::new(self.degree, control_points, self.knot_interval, self.t_start)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn control_points(&self) -> &[FrenetPoint] {
        &self.control_points
    }

    pub fn len(&self) -> usize {
        self.control_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.control_points.is_empty()
    }

    pub fn knot_interval(&self) -> f64 {
        self.knot_interval
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn num_spans(&self) -> usize {
        self.control_points.len() - self.degree
    }

    pub fn duration(&self) -> f64 {
        self.num_spans() as f64 * self.knot_interval
    }

    pub fn t_end(&self) -> f64 {
        self.t_start + self.duration()
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t_start - DOMAIN_EPS && t <= self.t_end() + DOMAIN_EPS
    }

    /// Knot `k` of the full (unclamped) knot vector.
    pub fn knot(&self, k: usize) -> f64 {
        self.t_start + (k as f64 - self.degree as f64) * self.knot_interval
    }

    pub fn knots(&self) -> Vec<f64> {
        (0..self.control_points.len() + self.degree + 1)
            .map(|k| self.knot(k))
            .collect()
    }

    /// Greville abscissa of control point `i`: the time it most directly
    /// shapes. Linear motions have their control points exactly on the curve
    /// at these times.
    pub fn greville(&self, i: usize) -> f64 {
        let p = self.degree as f64;
        self.t_start + (i as f64 - (p - 1.0) / 2.0) * self.knot_interval
    }

    /// Index `k` of the knot span `[t_k, t_{k+1})` containing `t`; the domain
    /// end maps to the last span.
    pub fn span_index(&self, t: f64) -> Result<usize, SplineError> {
        if !self.contains(t) {
            return Err(SplineError::OutsideDomain {
                t,
                start: self.t_start,
                end: self.t_end(),
            });
        }
        let offset = ((t - self.t_start) / self.knot_interval).floor();
        let offset = if offset < 0.0 { 0 } else { offset as usize };
        Ok((self.degree + offset).min(self.control_points.len() - 1))
    }

    /// The `degree + 1` basis values that are nonzero at `t`, together with
    /// the index of the first control point they weight.
    pub fn active_basis(&self, t: f64) -> Result<(usize, Vec<f64>), SplineError> {
        let k = self.span_index(t)?;
        let p = self.degree;
        let mut n = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = t - self.knot(k + 1 - j);
            right[j] = self.knot(k + j) - t;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        Ok((k - p, n))
    }

    pub fn evaluate(&self, t: f64) -> Result<FrenetPoint, SplineError> {
        let (first, weights) = self.active_basis(t)?;
        Ok(weights
            .iter()
            .zip(&self.control_points[first..])
            .fold(FrenetPoint::ZERO, |acc, (w, q)| acc + *q * *w))
    }

    /// Control points of the `order`-th derivative curve: repeated forward
    /// differences divided by the knot interval. The result has degree
    /// `degree - order`, the same knot interval and the same domain.
    pub fn derivative_control_points(&self, order: usize) -> Result<Vec<FrenetPoint>, SplineError> {
        if order > self.degree {
            return Err(SplineError::OrderExceedsDegree {
                order,
                degree: self.degree,
            });
        }
        let mut points = self.control_points.clone();
        for _ in 0..order {
            points = points.windows(2).map(|w| (w[1] - w[0]) / self.knot_interval).collect();
        }
        Ok(points)
    }

    pub fn derivative(&self, order: usize) -> Result<UniformBSpline, SplineError> {
        let points = self.derivative_control_points(order)?;
        UniformBSpline::new(self.degree - order, points, self.knot_interval, self.t_start)
    }

    pub fn kinematics(&self) -> Kinematics {
        Kinematics::new(self)
    }

    /// Samples at `t_start, t_start + dt, ...`, always including the domain end.
    pub fn sample(&self, dt: f64) -> Result<Vec<TrajectorySample>, SplineError> {
        let times = sample_times(self.t_start, self.t_end(), dt)?;
        let kin = self.kinematics();
        times.into_iter().map(|t| kin.at(t)).collect()
    }
}

/// Grid `start, start + dt, ...` covering `[start, end]` with `end` included.
pub fn sample_times(start: f64, end: f64, dt: f64) -> Result<Vec<f64>, SplineError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(SplineError::Invalid(format!(
            "sampling step must be positive, got {dt}"
        )));
    }
    let duration = end - start;
    let n = (duration / dt + 1e-9).floor().max(0.0) as usize;
    let mut times: Vec<f64> = (0..=n).map(|k| start + k as f64 * dt).collect();
    if let Some(last) = times.last_mut() {
        if (end - *last).abs() <= DOMAIN_EPS {
            *last = end;
        } else if *last < end {
            times.push(end);
        }
    }
    Ok(times)
}

/// A spline together with its derivative curves, for repeated sampling.
#[derive(Debug, Clone)]
pub struct Kinematics {
    position: UniformBSpline,
    derivatives: [Option<UniformBSpline>; 3],
}

impl Kinematics {
    pub fn new(spline: &UniformBSpline) -> Self {
        let d = |order: usize| spline.derivative(order).ok();
        Self {
            position: spline.clone(),
            derivatives: [d(1), d(2), d(3)],
        }
    }

    pub fn position(&self) -> &UniformBSpline {
        &self.position
    }

    /// Derivative of the given order (1..=3) at `t`; zero when the order
    /// exceeds the spline degree.
    pub fn derivative_at(&self, order: usize, t: f64) -> Result<FrenetPoint, SplineError> {
        match self.derivatives.get(order.wrapping_sub(1)) {
            Some(Some(spline)) => spline.evaluate(t),
            Some(None) => {
                if self.position.contains(t) {
                    Ok(FrenetPoint::ZERO)
                } else {
                    Err(SplineError::OutsideDomain {
                        t,
                        start: self.position.t_start(),
                        end: self.position.t_end(),
                    })
                }
            }
            None => Err(SplineError::Invalid(format!("derivative order {order} not tracked"))),
        }
    }

    pub fn at(&self, t: f64) -> Result<TrajectorySample, SplineError> {
        Ok(TrajectorySample {
            t,
            position: self.position.evaluate(t)?,
            velocity: self.derivative_at(1, t)?,
            acceleration: self.derivative_at(2, t)?,
            jerk: self.derivative_at(3, t)?,
        })
    }
}

/// Result of a least-squares spline fit.
#[derive(Debug, Clone)]
pub struct SplineFit {
    pub spline: UniformBSpline,
    /// Root-mean-square Euclidean residual at the input timestamps (m).
    pub residual_rms: f64,
}

/// Least-squares uniform B-spline through time-stamped points.
///
/// The curve starts at the first timestamp and gets the smallest number of
/// spans that covers the last one.
pub fn fit_through(points: &[(f64, FrenetPoint)], degree: usize, knot_interval: f64) -> Result<SplineFit, SplineError> {
    if points.len() < degree + 1 {
        return Err(SplineError::Fit(format!(
            "need at least {} points for degree {degree}, got {}",
            degree + 1,
            points.len()
        )));
    }
    if !(knot_interval > 0.0) {
        return Err(SplineError::Fit(format!(
            "knot interval must be positive, got {knot_interval}"
        )));
    }
    if points.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(SplineError::Fit("timestamps must be strictly increasing".into()));
    }
    let t0 = points[0].0;
    let span = points[points.len() - 1].0 - t0;
    let spans = ((span / knot_interval) - 1e-9).ceil().max(1.0) as usize;
    fit_control_points(points, degree, knot_interval, t0, spans + degree, &[])
}

/// Least-squares fit with a fixed number of control points, the first
/// `fixed_prefix.len()` of which are held at the given values.
pub(crate) fn fit_control_points(
    points: &[(f64, FrenetPoint)],
    degree: usize,
    knot_interval: f64,
    t_start: f64,
    num_control: usize,
    fixed_prefix: &[FrenetPoint],
) -> Result<SplineFit, SplineError> {
    let free = num_control.saturating_sub(fixed_prefix.len());
    if free == 0 {
        return Err(SplineError::Fit("no free control points".into()));
    }
    if points.len() < free {
        return Err(SplineError::Fit(format!(
            "underdetermined: {} points for {free} unknown control points",
            points.len()
        )));
    }
    let mut template = vec![FrenetPoint::ZERO; num_control];
    template[..fixed_prefix.len()].copy_from_slice(fixed_prefix);
    let shape = UniformBSpline::new(degree, template, knot_interval, t_start)?;

    let offset = fixed_prefix.len();
    let mut design = DMatrix::<f64>::zeros(points.len(), free);
    let mut rhs = DMatrix::<f64>::zeros(points.len(), 2);
    for (row, (t, target)) in points.iter().enumerate() {
        let (first, weights) = shape.active_basis(*t)?;
        let mut fixed = FrenetPoint::ZERO;
        for (k, w) in weights.iter().enumerate() {
            let idx = first + k;
            if idx < offset {
                fixed += fixed_prefix[idx] * *w;
            } else {
                design[(row, idx - offset)] = *w;
            }
        }
        rhs[(row, 0)] = target.s - fixed.s;
        rhs[(row, 1)] = target.l - fixed.l;
    }

    let svd = design.svd(true, true);
    let sigma_max = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|s| **s > sigma_max * 1e-10).count();
    if rank < free {
        return Err(SplineError::Fit(format!(
            "rank-deficient system: rank {rank} for {free} unknowns"
        )));
    }
    let solution = svd
        .solve(&rhs, sigma_max * 1e-12)
        .map_err(|e| SplineError::Fit(e.to_string()))?;

    let mut control = fixed_prefix.to_vec();
    control.extend((0..free).map(|i| FrenetPoint::new(solution[(i, 0)], solution[(i, 1)])));
    let spline = UniformBSpline::new(degree, control, knot_interval, t_start)?;

    let mut sq = 0.0;
    for (t, target) in points {
        sq += (spline.evaluate(*t)? - *target).norm_squared();
    }
    let residual_rms = (sq / points.len() as f64).sqrt();
    Ok(SplineFit { spline, residual_rms })
}
