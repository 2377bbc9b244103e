//! Acceptance criteria 1 to 10.
//!
//! All criteria run in sequence from one test so that the timing criterion
//! is not disturbed by other tests running in parallel. Each criterion
//! prints one `PASS` or `FAIL` line; the test fails if any criterion fails.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trajrepair::bspline::{FrenetPoint, UniformBSpline};
use trajrepair::costs::{
    collision_cost, collision_penalty, feasibility_cost, smoothness_cost, CostWeights, FeasibilityShape, FitTarget,
    ShapeParams,
};
use trajrepair::cspace::AnchorPair;
use trajrepair::export::{
    export_results, read_result_document, timing_harness, ResultBundle, ITERATION_COLUMNS, STAGE_COLUMNS,
};
use trajrepair::fttr::{binary_search, is_feasible, run_pipeline, FttrResult, Probe, SearchConfig, Termination};
use trajrepair::repair::plan;
use trajrepair::scenario::{load_scenario, ReferenceSpec, Scenario};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(format!("{name}.json"))
}

fn scenario(name: &str) -> Scenario {
    load_scenario(&scenario_path(name)).expect("shipped scenario loads")
}

fn within(elapsed: Duration, limit_s: f64, what: &str) -> Result<(), String> {
    if elapsed.as_secs_f64() < limit_s {
        Ok(())
    } else {
        Err(format!("{what} took {:.2} s, limit {limit_s} s", elapsed.as_secs_f64()))
    }
}

fn random_spline(rng: &mut ChaCha8Rng, n: usize, dt: f64) -> UniformBSpline {
    let mut p = FrenetPoint::new(rng.random_range(-10.0..10.0), rng.random_range(-3.0..3.0));
    let mut q = Vec::with_capacity(n);
    for _ in 0..n {
        q.push(p);
        p += FrenetPoint::new(rng.random_range(-1.0..4.0), rng.random_range(-1.0..1.0));
    }
    UniformBSpline::new(3, q, dt, rng.random_range(-5.0..5.0)).unwrap()
}

// ---------------------------------------------------------------------------
// 1. B-spline invariants
// ---------------------------------------------------------------------------

/// Cox-de Boor recursion on an explicit knot vector.
fn cox_de_boor(i: usize, p: usize, t: f64, knots: &[f64]) -> f64 {
    if p == 0 {
        return if knots[i] <= t && t < knots[i + 1] { 1.0 } else { 0.0 };
    }
    let mut value = 0.0;
    let left = knots[i + p] - knots[i];
    if left > 0.0 {
        value += (t - knots[i]) / left * cox_de_boor(i, p - 1, t, knots);
    }
    let right = knots[i + p + 1] - knots[i + 1];
    if right > 0.0 {
        value += (knots[i + p + 1] - t) / right * cox_de_boor(i + 1, p - 1, t, knots);
    }
    value
}

/// Distance from `x` to the convex hull of `points` (zero inside).
fn hull_distance(x: FrenetPoint, points: &[FrenetPoint]) -> f64 {
    let mut pts: Vec<FrenetPoint> = points.to_vec();
    pts.sort_by(|a, b| a.s.total_cmp(&b.s).then(a.l.total_cmp(&b.l)));
    pts.dedup();
    let seg_dist = |a: FrenetPoint, b: FrenetPoint| {
        let ab = b - a;
        let len2 = ab.norm_squared();
        let u = if len2 > 0.0 {
            ((x - a).dot(ab) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (x - (a + ab * u)).norm()
    };
    if pts.len() < 3 {
        return match pts.len() {
            1 => (x - pts[0]).norm(),
            _ => seg_dist(pts[0], pts[pts.len() - 1]),
        };
    }
    // Andrew's monotone chain, counter-clockwise
    let cross = |o: FrenetPoint, a: FrenetPoint, b: FrenetPoint| (a - o).cross(b - o);
    let mut hull: Vec<FrenetPoint> = Vec::new();
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &FrenetPoint>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    if hull.len() < 3 {
        return seg_dist(hull[0], hull[hull.len() - 1]);
    }
    let inside = (0..hull.len()).all(|k| cross(hull[k], hull[(k + 1) % hull.len()], x) >= 0.0);
    if inside {
        return 0.0;
    }
    (0..hull.len())
        .map(|k| seg_dist(hull[k], hull[(k + 1) % hull.len()]))
        .fold(f64::INFINITY, f64::min)
}

fn ac1_bspline_invariants() -> Check {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_unity, mut worst_hull, mut worst_deriv) = (0.0_f64, 0.0_f64, 0.0_f64);
    for _ in 0..1000 {
        let n = rng.random_range(4..=20);
        let dt = rng.random_range(0.05..1.0);
        let spline = random_spline(&mut rng, n, dt);
        let knots: Vec<f64> = (0..n + 4).map(|k| spline.knot(k)).collect();
        let derivs: Vec<UniformBSpline> = (1..=3).map(|k| spline.derivative(k).unwrap()).collect();
        for _ in 0..10 {
            let t = rng.random_range(spline.t_start()..spline.t_end());
            let (first, w) = spline.active_basis(t).unwrap();
            let oracle: Vec<f64> = (0..n).map(|i| cox_de_boor(i, 3, t, &knots)).collect();
            worst_unity = worst_unity.max((oracle.iter().sum::<f64>() - 1.0).abs());
            worst_unity = worst_unity.max((w.iter().sum::<f64>() - 1.0).abs());
            for (k, wk) in w.iter().enumerate() {
                worst_unity = worst_unity.max((wk - oracle[first + k]).abs());
            }
            let x = spline.evaluate(t).unwrap();
            worst_hull = worst_hull.max(hull_distance(x, &spline.control_points()[first..first + 4]));

            // keep the finite-difference stencil inside one knot span
            let h = 1e-4 * dt;
            let offset = (t - spline.t_start()) / dt;
            let frac = offset - offset.floor();
            if frac * dt < 2.0 * h || (1.0 - frac) * dt < 2.0 * h {
                continue;
            }
            for order in 1..=3 {
                let lower = |t: f64| {
                    if order == 1 {
                        spline.evaluate(t).unwrap()
                    } else {
                        derivs[order - 2].evaluate(t).unwrap()
                    }
                };
                let fd = (lower(t + h) - lower(t - h)) / (2.0 * h);
                let exact = derivs[order - 1].evaluate(t).unwrap();
                let scale = derivs[order - 1]
                    .control_points()
                    .iter()
                    .map(|d| d.norm())
                    .fold(1e-12, f64::max);
                worst_deriv = worst_deriv.max((fd - exact).norm() / scale);
            }
        }
    }
    ensure!(worst_unity < 1e-9, "partition of unity error {worst_unity:e}");
    ensure!(worst_hull < 1e-9, "convex hull violation {worst_hull:e} m");
    ensure!(worst_deriv < 1e-4, "derivative relative error {worst_deriv:e}");
    within(started.elapsed(), 5.0, "1000 splines")?;
    Ok(format!(
        "unity {worst_unity:.1e}, hull {worst_hull:.1e} m, derivative {worst_deriv:.1e}, {:.2} s",
        started.elapsed().as_secs_f64()
    ))
}

// ---------------------------------------------------------------------------
// 2. Cost gradients
// ---------------------------------------------------------------------------

/// Central finite-difference gradient of `f` over all control coordinates.
fn fd_gradient(spline: &UniformBSpline, f: &dyn Fn(&UniformBSpline) -> f64) -> Vec<f64> {
    let q = spline.control_points().to_vec();
    let mut g = Vec::with_capacity(2 * q.len());
    for i in 0..q.len() {
        for axis in 0..2 {
            let h = 1e-6 * (1.0 + if axis == 0 { q[i].s.abs() } else { q[i].l.abs() });
            let shifted = |delta: f64| {
                let mut p = q.clone();
                if axis == 0 {
                    p[i].s += delta;
                } else {
                    p[i].l += delta;
                }
                f(&spline.with_control_points(p).unwrap())
            };
            g.push((shifted(h) - shifted(-h)) / (2.0 * h));
        }
    }
    g
}

fn relative_error(analytic: &[FrenetPoint], fd: &[f64]) -> f64 {
    let a: Vec<f64> = analytic.iter().flat_map(|p| [p.s, p.l]).collect();
    let diff = a.iter().zip(fd).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = fd.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-8);
    diff / scale
}

fn ac2_cost_gradients() -> Check {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = [0.0_f64; 4];
    for _ in 0..50 {
        let n = rng.random_range(8..=18);
        let dt = rng.random_range(0.1..0.5);
        let spline = random_spline(&mut rng, n, dt);
        let all = 0..n;

        let js = smoothness_cost(&spline, all.clone());
        let fd = fd_gradient(&spline, &|s| smoothness_cost(s, 0..n).value);
        worst[0] = worst[0].max(relative_error(&js.gradient, &fd));

        let s_f = rng.random_range(0.3..1.5);
        let pairs: Vec<AnchorPair> = (0..rng.random_range(1..6))
            .map(|k| {
                let i = rng.random_range(0..n);
                let q = spline.control_points()[i];
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                let v = FrenetPoint::new(angle.cos(), angle.sin());
                // place the anchor so that c = s_f - d covers all three branches
                let d = rng.random_range(-1.0..2.0) * s_f;
                AnchorPair {
                    p: q - v * d,
                    v,
                    obstacle_id: format!("o{k}"),
                    control_index: i,
                }
            })
            .collect();
        let jc = collision_cost(spline.control_points(), &pairs, s_f, all.clone());
        let fd = fd_gradient(&spline, &|s| {
            collision_cost(s.control_points(), &pairs, s_f, 0..n).value
        });
        worst[1] = worst[1].max(relative_error(&jc.gradient, &fd));

        let shape = FeasibilityShape::new(
            rng.random_range(1.0..8.0),
            rng.random_range(1.0..20.0),
            rng.random_range(5.0..100.0),
            ShapeParams::default(),
        )
        .unwrap();
        let weights = CostWeights {
            w_v: rng.random_range(0.5..2.0),
            w_a: rng.random_range(0.5..2.0),
            w_j: rng.random_range(0.5..2.0),
            ..CostWeights::default()
        };
        let jd = feasibility_cost(&spline, &shape, &weights, all.clone());
        let fd = fd_gradient(&spline, &|s| feasibility_cost(s, &shape, &weights, 0..n).value);
        worst[2] = worst[2].max(relative_error(&jd.gradient, &fd));

        let target_curve = random_spline(&mut rng, n, dt);
        let target = FitTarget::new(&target_curve, rng.random_range(8..40));
        let (axial, radial) = (rng.random_range(0.1..10.0), rng.random_range(0.1..10.0));
        let jf = target.cost(&spline, axial, radial, all.clone());
        let fd = fd_gradient(&spline, &|s| target.cost(s, axial, radial, 0..n).value);
        worst[3] = worst[3].max(relative_error(&jf.gradient, &fd));
    }
    for (name, err) in ["Js", "Jc", "Jd", "Jf"].iter().zip(worst) {
        ensure!(err < 1e-4, "{name} gradient relative error {err:e}");
    }
    within(started.elapsed(), 30.0, "gradient suite")?;
    Ok(format!(
        "Js {:.1e}, Jc {:.1e}, Jd {:.1e}, Jf {:.1e}, {:.2} s",
        worst[0],
        worst[1],
        worst[2],
        worst[3],
        started.elapsed().as_secs_f64()
    ))
}

// ---------------------------------------------------------------------------
// 3. Collision penalty smoothness
// ---------------------------------------------------------------------------

fn ac3_collision_penalty_smoothness() -> Check {
    let mut worst = 0.0_f64;
    for s_f in [0.5_f64, 1.0, 1.3] {
        for c in [0.0_f64, s_f] {
            let left = collision_penalty(c.next_down(), s_f);
            let right = collision_penalty(c.next_up(), s_f);
            let at = collision_penalty(c, s_f);
            for (a, b) in [(left, at), (at, right), (left, right)] {
                worst = worst
                    .max((a.0 - b.0).abs())
                    .max((a.1 - b.1).abs())
                    .max((a.2 - b.2).abs());
            }
        }
    }
    ensure!(worst < 1e-9, "one-sided mismatch {worst:e}");
    Ok(format!("max one-sided mismatch {worst:.1e} at c = 0 and c = s_f"))
}

// ---------------------------------------------------------------------------
// 4. Search branches and call bound
// ---------------------------------------------------------------------------

fn call_bound(ttc: f64, delta_t: f64) -> usize {
    ((ttc / delta_t).log2().ceil().max(0.0) as usize) + 1
}

/// Replays the iteration trace against the bracket rules.
fn check_trace(result: &FttrResult, delta_t: f64) -> Result<(), String> {
    let (mut t_start, mut t_end) = (0.0, result.ttc);
    for (k, it) in result.iterations.iter().enumerate() {
        ensure!(
            it.t_rep >= t_start && it.t_rep <= t_end,
            "iteration {k}: t_rep {} outside [{t_start}, {t_end}]",
            it.t_rep
        );
        if it.feasible {
            ensure!(
                it.t_start == it.t_rep && it.t_end == t_end,
                "iteration {k}: feasible update wrong"
            );
        } else {
            ensure!(
                it.t_end == it.t_rep && it.t_start == t_start,
                "iteration {k}: infeasible update wrong"
            );
        }
        ensure!(it.t_start <= it.t_end, "iteration {k}: bracket inverted");
        if k + 1 < result.iterations.len() {
            ensure!(
                it.t_end - it.t_start > delta_t,
                "iteration {k}: loop continued past resolution"
            );
        }
        t_start = it.t_start;
        t_end = it.t_end;
    }
    let calls = result.planner_calls();
    ensure!(
        calls <= call_bound(result.ttc, delta_t),
        "{calls} calls exceed bound {}",
        call_bound(result.ttc, delta_t)
    );
    ensure!(
        result.f_ttr >= 0.0 && result.f_ttr < result.ttc,
        "f_ttr {} outside [0, ttc)",
        result.f_ttr
    );
    Ok(())
}

fn ac4_search_branches() -> Check {
    let collision = scenario("start_in_collision");
    let r = run_pipeline(&collision).map_err(|e| e.to_string())?;
    ensure!(
        r.ttc == 0.0 && r.f_ttr == 0.0,
        "start in collision gave ttc {} f_ttr {}",
        r.ttc,
        r.f_ttr
    );
    ensure!(
        r.gamma == collision.reference && r.planner_calls() == 0,
        "TTC = 0 must return the reference"
    );
    ensure!(
        r.terminated_by == Termination::DegenerateBranch,
        "TTC = 0 termination {:?}",
        r.terminated_by
    );

    let free = scenario("no_conflict");
    let r = run_pipeline(&free).map_err(|e| e.to_string())?;
    ensure!(
        r.ttc.is_infinite() && r.f_ttr.is_infinite(),
        "no conflict gave ttc {} f_ttr {}",
        r.ttc,
        r.f_ttr
    );
    ensure!(
        r.gamma == free.reference && r.planner_calls() == 0,
        "TTC = inf must return the reference"
    );

    let mut real = Vec::new();
    for name in ["crossing", "road_damage"] {
        let sc = scenario(name);
        let r = run_pipeline(&sc).map_err(|e| e.to_string())?;
        check_trace(&r, sc.search.delta_t).map_err(|e| format!("{name}: {e}"))?;
        let report = is_feasible(&r.gamma, &sc.obstacles, &sc.limits, sc.search.collision_check_dt)
            .map_err(|e| e.to_string())?;
        ensure!(report.overall, "{name}: returned trajectory infeasible");
        real.push(format!("{name} {} calls", r.planner_calls()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let reference = scenario("crossing").reference;
    for _ in 0..200 {
        let ttc = rng.random_range(0.2..8.0);
        let delta_t = rng.random_range(0.02..1.0);
        let tau = rng.random_range(-0.5..ttc);
        let config = SearchConfig {
            delta_t,
            time_budget_s: 1e3,
            ..SearchConfig::default()
        };
        let r = binary_search(&reference, ttc, &config, None, Instant::now(), |t| {
            Probe::verdict(t <= tau)
        });
        check_trace(&r, delta_t).map_err(|e| format!("ttc {ttc} dT {delta_t} tau {tau}: {e}"))?;
    }
    Ok(format!(
        "TTC = 0 and inf branches ok, {}, 200 synthetic traces ok",
        real.join(", ")
    ))
}

// ---------------------------------------------------------------------------
// 5. Step-function oracle
// ---------------------------------------------------------------------------

fn ac5_step_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let reference = scenario("crossing").reference;
    let mut worst = 0.0_f64;
    for _ in 0..20 {
        let ttc: f64 = rng.random_range(0.5..10.0);
        let delta_t = rng.random_range(0.01..(0.5 * ttc).min(1.0));
        let tau = rng.random_range(0.0..ttc);
        let config = SearchConfig {
            delta_t,
            time_budget_s: 1e3,
            ..SearchConfig::default()
        };
        let r = binary_search(&reference, ttc, &config, None, Instant::now(), |t| {
            Probe::verdict(t <= tau)
        });
        let err = (r.f_ttr - tau).abs();
        ensure!(
            err <= delta_t,
            "tau {tau} ttc {ttc} dT {delta_t}: f_ttr {} off by {err}",
            r.f_ttr
        );
        worst = worst.max(err / delta_t);
    }
    Ok(format!("20 triples, worst |F-TTR - tau| = {worst:.3} dT"))
}

// ---------------------------------------------------------------------------
// 6. Crossing traffic
// ---------------------------------------------------------------------------

fn min_speed(traj: &UniformBSpline, dt: f64) -> f64 {
    traj.sample(dt)
        .unwrap()
        .iter()
        .map(|s| s.velocity.norm())
        .fold(f64::INFINITY, f64::min)
}

fn ac6_crossing() -> Check {
    let started = Instant::now();
    let sc = scenario("crossing");
    let dt = sc.search.collision_check_dt;
    let r = run_pipeline(&sc).map_err(|e| e.to_string())?;
    ensure!((r.ttc - 2.9).abs() <= dt + 1e-9, "ttc {} not near 2.9", r.ttc);
    ensure!(sc.search.delta_t == 0.4, "delta_t {}", sc.search.delta_t);
    let report = is_feasible(&r.gamma, &sc.obstacles, &sc.limits, dt).map_err(|e| e.to_string())?;
    ensure!(report.overall, "returned trajectory infeasible: {report:?}");
    let samples = r.gamma.sample(dt).unwrap();
    let max_l = samples.iter().map(|s| s.position.l.abs()).fold(0.0, f64::max);
    let max_a_l = samples.iter().map(|s| s.acceleration.l.abs()).fold(0.0, f64::max);
    let max_a_s = samples.iter().map(|s| s.acceleration.s.abs()).fold(0.0, f64::max);
    let min_a_s = samples.iter().map(|s| s.acceleration.s).fold(f64::INFINITY, f64::min);
    ensure!(
        max_l < 1e-9 && max_a_l < 1e-9,
        "lateral motion |l| {max_l:e}, |a_l| {max_a_l:e}"
    );
    ensure!(min_a_s < 0.0, "no deceleration");
    ensure!(
        max_a_s <= sc.limits.a_max,
        "|a_s| {max_a_s} exceeds {}",
        sc.limits.a_max
    );

    let mut speeds = Vec::new();
    for t_rep in [0.0, 0.8, 1.2, 1.6] {
        let c = plan(&sc.request().with_t_rep(sc.reference.t_start() + t_rep)).map_err(|e| e.to_string())?;
        speeds.push(min_speed(&c.trajectory, dt));
    }
    ensure!(
        speeds.windows(2).all(|w| w[1] < w[0]),
        "minimum speeds not decreasing: {speeds:?}"
    );
    within(started.elapsed(), 60.0, "crossing scenario")?;
    Ok(format!(
        "F-TTR {:.4} s in {} calls, min a_s {:.2} m/s2, min speed at t_rep 0/0.8/1.2/1.6: {:.2}/{:.2}/{:.2}/{:.2} m/s",
        r.f_ttr,
        r.planner_calls(),
        min_a_s,
        speeds[0],
        speeds[1],
        speeds[2],
        speeds[3]
    ))
}

// ---------------------------------------------------------------------------
// 7. Road damage with neighbors
// ---------------------------------------------------------------------------

fn ac7_road_damage() -> Check {
    let started = Instant::now();
    let sc = scenario("road_damage");
    let dt = sc.search.collision_check_dt;
    let r = run_pipeline(&sc).map_err(|e| e.to_string())?;
    ensure!((r.ttc - 1.6).abs() <= dt + 1e-9, "ttc {} not near 1.6", r.ttc);
    let report = is_feasible(&r.gamma, &sc.obstacles, &sc.limits, dt).map_err(|e| e.to_string())?;
    ensure!(report.overall, "returned trajectory infeasible: {report:?}");
    let samples = r.gamma.sample(dt).unwrap();
    let max_a_l = samples.iter().map(|s| s.acceleration.l.abs()).fold(0.0, f64::max);
    let max_l = samples.iter().map(|s| s.position.l).fold(f64::NEG_INFINITY, f64::max);
    ensure!(
        max_a_l <= sc.limits.a_max,
        "lateral acceleration {max_a_l} exceeds {}",
        sc.limits.a_max
    );
    ensure!(max_l > 0.5, "no lateral deviation (max l {max_l})");
    let beyond: Vec<f64> = r
        .iterations
        .iter()
        .filter(|it| it.t_rep > r.f_ttr && !it.feasible)
        .map(|it| it.t_rep)
        .collect();
    ensure!(!beyond.is_empty(), "no infeasible probe beyond F-TTR {}", r.f_ttr);
    within(started.elapsed(), 60.0, "road damage scenario")?;
    Ok(format!(
        "F-TTR {:.4} s, max l {:.2} m, max |a_l| {:.2} m/s2, infeasible probes beyond F-TTR at {:?} s",
        r.f_ttr, max_l, max_a_l, beyond
    ))
}

// ---------------------------------------------------------------------------
// 8. Anytime property
// ---------------------------------------------------------------------------

fn ac8_anytime() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let scenarios = [scenario("crossing"), scenario("road_damage")];
    let full: Vec<f64> = scenarios
        .iter()
        .map(|sc| run_pipeline(sc).map(|r| r.total_time_s).unwrap_or(0.01))
        .collect();
    let (mut truncated, mut reference_returned) = (0, 0);
    for k in 0..50 {
        let mut sc = scenarios[k % 2].clone();
        sc.search.time_budget_s = rng.random_range(1e-6..1.2 * full[k % 2]);
        let r = run_pipeline(&sc).map_err(|e| e.to_string())?;
        if r.terminated_by == Termination::TimeBudget {
            truncated += 1;
        }
        if r.gamma == sc.reference {
            reference_returned += 1;
            continue;
        }
        let report = is_feasible(&r.gamma, &sc.obstacles, &sc.limits, sc.search.collision_check_dt)
            .map_err(|e| e.to_string())?;
        ensure!(
            report.overall,
            "budget {} s returned an infeasible trajectory",
            sc.search.time_budget_s
        );
    }
    ensure!(truncated > 0, "no budget truncated the search");
    Ok(format!(
        "50 budgets, {truncated} truncated, {reference_returned} returned the reference, the rest feasible"
    ))
}

// ---------------------------------------------------------------------------
// 9. Timing harness
// ---------------------------------------------------------------------------

fn ac9_timing() -> Check {
    let mut rows = Vec::new();
    for name in ["crossing", "road_damage"] {
        let sc = scenario(name);
        let (stats, _) = timing_harness(&sc, 100).map_err(|e| e.to_string())?;
        let cv_total = stats.total_std_s / stats.total_mean_s;
        let cv_iter = stats.per_iteration_std_s / stats.per_iteration_mean_s;
        let row = format!(
            "{name} | {:.3} ± {:.3} ms | {:.3} ± {:.3} ms",
            stats.total_mean_s * 1e3,
            stats.total_std_s * 1e3,
            stats.per_iteration_mean_s * 1e3,
            stats.per_iteration_std_s * 1e3
        );
        println!("    {row}");
        ensure!(cv_total < 0.25, "{name}: total time CV {cv_total:.3}");
        ensure!(cv_iter < 0.25, "{name}: per-iteration CV {cv_iter:.3}");
        rows.push(format!("{name} CV {cv_total:.3}/{cv_iter:.3}"));
    }
    Ok(rows.join(", "))
}

// ---------------------------------------------------------------------------
// 10. CLI golden output
// ---------------------------------------------------------------------------

const SHIPPED: [&str; 4] = ["crossing", "road_damage", "no_conflict", "start_in_collision"];

fn cli_summaries() -> Result<String, String> {
    let mut text = String::new();
    for cmd in ["validate", "check", "search"] {
        for name in SHIPPED {
            let out = Command::new(env!("CARGO_BIN_EXE_trajrepair"))
                .args([cmd, "--scenario"])
                .arg(scenario_path(name))
                .output()
                .map_err(|e| e.to_string())?;
            ensure!(out.status.success(), "{cmd} {name} exited with {:?}", out.status.code());
            text.push_str(&String::from_utf8_lossy(&out.stdout));
        }
    }
    Ok(text)
}

fn check_exports(dir: &Path) -> Result<(), String> {
    let doc = read_result_document(&dir.join("result.json"))?;
    ensure!(
        doc.iterations.len() == doc.planner_calls,
        "iteration rows != planner calls"
    );
    for (file, columns) in [
        ("stages.csv", &STAGE_COLUMNS[..]),
        ("iterations.csv", &ITERATION_COLUMNS[..]),
    ] {
        let mut reader = csv::Reader::from_path(dir.join(file)).map_err(|e| e.to_string())?;
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| e.to_string())?
            .iter()
            .map(String::from)
            .collect();
        ensure!(header == columns, "{file} header {header:?}");
        for record in reader.records() {
            let record = record.map_err(|e| e.to_string())?;
            ensure!(record.len() == columns.len(), "{file}: ragged row");
        }
    }
    let gamma: ReferenceSpec =
        serde_json::from_str(&std::fs::read_to_string(dir.join("gamma.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    gamma.to_spline().map_err(|e| e.to_string())?;
    Ok(())
}

fn ac10_cli_golden() -> Check {
    let first = cli_summaries()?;
    let second = cli_summaries()?;
    ensure!(first == second, "summary lines differ between runs:\n{first}\n{second}");
    let golden_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/cli_summary.txt");
    let golden = std::fs::read_to_string(&golden_path).map_err(|e| e.to_string())?;
    ensure!(
        first == golden,
        "summary lines differ from {}:\n{first}",
        golden_path.display()
    );

    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    for name in SHIPPED {
        for run in 0..2 {
            let dir = tmp.path().join(format!("{name}_{run}"));
            let status = Command::new(env!("CARGO_BIN_EXE_trajrepair"))
                .args(["search", "--scenario"])
                .arg(scenario_path(name))
                .arg("--out")
                .arg(&dir)
                .status()
                .map_err(|e| e.to_string())?;
            ensure!(status.success(), "search {name} --out exited with {:?}", status.code());
            check_exports(&dir).map_err(|e| format!("{name}: {e}"))?;
        }
    }
    let sc = scenario("crossing");
    let r = run_pipeline(&sc).map_err(|e| e.to_string())?;
    let dir = tmp.path().join("library");
    export_results(
        &ResultBundle::from_search(&sc, &r, None).map_err(|e| e.to_string())?,
        &dir,
    )
    .map_err(|e| e.to_string())?;
    check_exports(&dir)?;
    Ok(format!(
        "{} summary lines stable across runs and equal to the golden file, exports schema-valid",
        first.lines().count()
    ))
}

#[test]
fn acceptance_criteria() {
    type Criterion = (&'static str, fn() -> Check);
    let criteria: [Criterion; 10] = [
        ("B-spline invariants", ac1_bspline_invariants),
        ("cost gradients", ac2_cost_gradients),
        ("collision penalty smoothness", ac3_collision_penalty_smoothness),
        ("search branches and call bound", ac4_search_branches),
        ("step-function oracle", ac5_step_oracle),
        ("crossing traffic", ac6_crossing),
        ("road damage", ac7_road_damage),
        ("anytime budgets", ac8_anytime),
        ("timing harness", ac9_timing),
        ("CLI golden output", ac10_cli_golden),
    ];
    let mut failed = Vec::new();
    for (k, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("AC{:<2} PASS  {name}: {detail}", k + 1),
            Err(reason) => {
                println!("AC{:<2} FAIL  {name}: {reason}", k + 1);
                failed.push(k + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
