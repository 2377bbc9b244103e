use std::path::Path;

use trajrepair::fttr::is_feasible;
use trajrepair::repair::{plan, CandidateStatus, RepairCandidate};
use trajrepair::scenario::{load_scenario, load_scenario_with, Scenario};

fn scenario(name: &str, overrides: &[&str]) -> Scenario {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(format!("{name}.json"));
    let overrides: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    if overrides.is_empty() {
        load_scenario(&path).unwrap()
    } else {
        load_scenario_with(&path, &overrides).unwrap()
    }
}

fn repair_at(sc: &Scenario, t_rep: f64) -> RepairCandidate {
    plan(&sc.request().with_t_rep(sc.reference.t_start() + t_rep)).unwrap()
}

#[test]
fn prefix_and_junction_are_preserved() {
    for (name, times) in [("crossing", [0.35, 1.6]), ("road_damage", [0.0, 0.4])] {
        let sc = scenario(name, &[]);
        let reference = sc.reference.kinematics();
        for t_rep in times {
            let c = repair_at(&sc, t_rep);
            let kin = c.trajectory.kinematics();
            let t0 = sc.reference.t_start();
            let mut t = t0;
            while t < c.junction_time - 1e-9 {
                let d = (kin.at(t).unwrap().position - reference.at(t).unwrap().position).norm();
                assert!(d < 1e-9, "{name} t_rep {t_rep}: prefix moved {d:e} at {t}");
                t += 0.01;
            }
            let (before, after) = (
                kin.at(c.junction_time - 1e-9).unwrap(),
                kin.at(c.junction_time + 1e-9).unwrap(),
            );
            assert!((before.position - after.position).norm() < 1e-6);
            assert!((before.velocity - after.velocity).norm() < 1e-6);
            assert!((before.acceleration - after.acceleration).norm() < 1e-6);
        }
    }
}

#[test]
fn planning_is_deterministic() {
    let sc = scenario("crossing", &[]);
    let (a, b) = (repair_at(&sc, 0.8), repair_at(&sc, 0.8));
    assert_eq!(a.trajectory.control_points(), b.trajectory.control_points());
    assert_eq!(a.status, b.status);
}

#[test]
fn collision_free_reference_is_a_fixed_point() {
    let sc = scenario("no_conflict", &[]);
    for t_rep in [0.0, 1.0, 4.5] {
        let c = repair_at(&sc, t_rep);
        assert_eq!(c.status, CandidateStatus::Unchanged);
        for (p, q) in c.trajectory.control_points().iter().zip(sc.reference.control_points()) {
            assert!((*p - *q).norm() < 1e-6);
        }
    }
}

#[test]
fn late_repair_with_tight_limits_is_rejected() {
    let sc = scenario("road_damage", &["limits.a_max_mps2=1.0"]);
    let c = repair_at(&sc, 1.2);
    let report = is_feasible(&c.trajectory, &sc.obstacles, &sc.limits, sc.search.collision_check_dt).unwrap();
    assert!(!report.overall);
}

#[test]
fn static_obstacle_is_cleared() {
    let sc = scenario("road_damage", &[]);
    let c = repair_at(&sc, 0.0);
    assert_eq!(c.status, CandidateStatus::Repaired);
    let report = is_feasible(&c.trajectory, &sc.obstacles, &sc.limits, 0.01).unwrap();
    assert!(report.collision_free, "{report:?}");
}
