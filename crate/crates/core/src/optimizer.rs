//! Limited-memory BFGS with a backtracking Armijo line search.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizerError {
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
    #[error("objective returned a non-finite value at iteration {iteration}")]
    NonFinite { iteration: usize },
    #[error("gradient length {got} does not match point length {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Which quantity the convergence tolerance applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToleranceKind {
    /// Largest absolute gradient component.
    #[default]
    GradientInf,
    /// Absolute cost decrease between accepted iterates.
    CostDelta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LineSearchConfig {
    pub initial_step: f64,
    pub shrink: f64,
    pub sufficient_decrease: f64,
    pub max_steps: usize,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        Self {
            initial_step: 1.0,
            shrink: 0.5,
            sufficient_decrease: 1e-4,
            max_steps: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub tolerance_kind: ToleranceKind,
    pub history_size: usize,
    pub line_search: LineSearchConfig,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            gradient_tolerance: 0.01,
            tolerance_kind: ToleranceKind::GradientInf,
            history_size: 8,
            line_search: LineSearchConfig::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        let bad = |m: &str| Err(OptimizerError::InvalidConfig(m.to_string()));
        if self.max_iterations < 1 {
            return bad("max_iterations must be >= 1");
        }
        if !(self.gradient_tolerance > 0.0) {
            return bad("gradient_tolerance must be > 0");
        }
        if self.history_size < 1 {
            return bad("history_size must be >= 1");
        }
        let ls = &self.line_search;
        if !(ls.initial_step > 0.0) {
            return bad("line_search.initial_step must be > 0");
        }
        if !(ls.shrink > 0.0 && ls.shrink < 1.0) {
            return bad("line_search.shrink must lie in (0, 1)");
        }
        if !(ls.sufficient_decrease > 0.0 && ls.sufficient_decrease < 1.0) {
            return bad("line_search.sufficient_decrease must lie in (0, 1)");
        }
        if ls.max_steps < 1 {
            return bad("line_search.max_steps must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIterations,
    LineSearchFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeOutcome {
    pub x: Vec<f64>,
    pub cost: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// Cost at the start point followed by the cost after each iteration.
    pub cost_trace: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn evaluate<F>(f: &mut F, x: &[f64], iteration: usize) -> Result<(f64, Vec<f64>), OptimizerError>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (cost, grad) = f(x);
    if grad.len() != x.len() {
        return Err(OptimizerError::DimensionMismatch {
            expected: x.len(),
            got: grad.len(),
        });
    }
    if !cost.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(OptimizerError::NonFinite { iteration });
    }
    Ok((cost, grad))
}

/// Two-loop recursion: returns `-H·g` for the implicit inverse Hessian whose
/// seed is `precondition` scaled by the latest curvature pair.
fn search_direction(
    grad: &[f64],
    history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    precondition: &dyn Fn(&[f64]) -> Vec<f64>,
) -> Vec<f64> {
    let mut q = grad.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    let mut q = precondition(&q);
    if let Some((s, y, _)) = history.back() {
        let hy = precondition(y);
        let gamma = dot(s, y) / dot(y, &hy);
        if gamma.is_finite() && gamma > 0.0 {
            for qi in q.iter_mut() {
                *qi *= gamma;
            }
        }
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Minimizes `objective`, which maps a point to its cost and gradient.
pub fn minimize<F>(objective: F, x0: &[f64], config: &OptimizerConfig) -> Result<OptimizeOutcome, OptimizerError>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    minimize_preconditioned(objective, x0, config, None)
}

/// Maps a gradient to a search direction.
pub type Preconditioner<'a> = &'a dyn Fn(&[f64]) -> Vec<f64>;

/// Like [`minimize`], seeding the inverse Hessian with `precondition`
/// (an approximation of `H⁻¹·g`, symmetric positive definite) instead of
/// the identity. The first step is then taken at full length.
pub fn minimize_preconditioned<F>(
    mut objective: F,
    x0: &[f64],
    config: &OptimizerConfig,
    precondition: Option<Preconditioner<'_>>,
) -> Result<OptimizeOutcome, OptimizerError>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let identity = |g: &[f64]| g.to_vec();
    let seed: &dyn Fn(&[f64]) -> Vec<f64> = precondition.unwrap_or(&identity);
    config.validate()?;
    let mut x = x0.to_vec();
    let (mut cost, mut grad) = evaluate(&mut objective, &x, 0)?;
    let mut trace = vec![cost];
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(config.history_size);

    let converged_on_gradient =
        |g: &[f64]| config.tolerance_kind == ToleranceKind::GradientInf && inf_norm(g) < config.gradient_tolerance;

    if x.is_empty() || converged_on_gradient(&grad) {
        return Ok(OptimizeOutcome {
            x,
            cost,
            iterations: 0,
            termination: Termination::Converged,
            cost_trace: trace,
        });
    }

    let ls = config.line_search;
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;
    while iterations < config.max_iterations {
        let mut dir = search_direction(&grad, &history, seed);
        let mut slope = dot(&dir, &grad);
        if !(slope < 0.0) {
            history.clear();
            dir = seed(&grad).iter().map(|g| -g).collect();
            if !(dot(&dir, &grad) < 0.0) {
                dir = grad.iter().map(|g| -g).collect();
            }
            slope = dot(&dir, &grad);
        }
        // first iteration without curvature information: keep the step short
        let mut step = if history.is_empty() && precondition.is_none() {
            ls.initial_step.min(1.0 / inf_norm(&grad).max(1e-12))
        } else {
            ls.initial_step
        };

        let mut accepted = None;
        for _ in 0..ls.max_steps {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            let (c, g) = objective(&trial);
            let finite = c.is_finite() && g.iter().all(|v| v.is_finite());
            if finite && c <= cost + ls.sufficient_decrease * step * slope {
                accepted = Some((trial, c, g));
                break;
            }
            step *= ls.shrink;
        }
        let Some((x_new, c_new, g_new)) = accepted else {
            termination = Termination::LineSearchFailure;
            break;
        };
        if g_new.len() != x.len() {
            return Err(OptimizerError::DimensionMismatch {
                expected: x.len(),
                got: g_new.len(),
            });
        }
        iterations += 1;

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            if history.len() == config.history_size {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }

        let decrease = cost - c_new;
        x = x_new;
        cost = c_new;
        grad = g_new;
        trace.push(cost);

        let done = match config.tolerance_kind {
            ToleranceKind::GradientInf => converged_on_gradient(&grad),
            ToleranceKind::CostDelta => decrease < config.gradient_tolerance,
        };
        if done {
            termination = Termination::Converged;
            break;
        }
    }

    Ok(OptimizeOutcome {
        x,
        cost,
        iterations,
        termination,
        cost_trace: trace,
    })
}
