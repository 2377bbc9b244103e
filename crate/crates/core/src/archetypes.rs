//! Built-in scenarios used by the tests and shipped as JSON under
//! `scenarios/`.
//!
//! * `crossing`: the ego drives straight at 10 m/s while two vehicles cross
//!   its lane ahead. Each crossing is the time window during which the
//!   crossing car occupies the ego lane, so the only way out is to arrive
//!   later. The first window is entered at t = 2.9 s.
//! * `road_damage`: the ego drives at 15 m/s toward a damaged patch of its
//!   lane (TTC about 1.6 s) with the left lane open, one car ahead in that
//!   lane at the same speed and a second one merging into it from further
//!   left.
//!
//! Vehicle parameters approximate a compact hatchback (Ford Escort class);
//! they are not taken from a datasheet.

use crate::costs::{CostWeights, DeformationWeights, FitWeights, RefinementWeights, ShapeParams};
use crate::cspace::HorizonPolicy;
use crate::fttr::SearchConfig;
use crate::optimizer::OptimizerConfig;
use crate::scenario::{
    FrameSpec, InflationSpec, LimitsSpec, Meta, ObstacleSpec, ReferenceSpec, RoadSpec, ScenarioFile, VehicleSpec,
    SCHEMA_VERSION,
};

pub const KNOT_INTERVAL_S: f64 = 0.1;

pub fn vehicle() -> VehicleSpec {
    VehicleSpec {
        wheelbase_m: 2.578,
        max_steering_rad: 0.910,
        width_m: 1.674,
        length_m: 4.298,
    }
}

/// Straight constant-speed reference along `l = 0` over `[0, horizon]`.
/// Control point `i` sits at its Greville time `(i - 1)·Δt`, which puts
/// the curve exactly on `s = speed·t`.
pub fn straight_reference(speed: f64, horizon: f64) -> ReferenceSpec {
    let spans = (horizon / KNOT_INTERVAL_S).round() as usize;
    ReferenceSpec::ControlPoints {
        degree: 3,
        knot_interval_s: KNOT_INTERVAL_S,
        t_start_s: 0.0,
        control_points: (0..spans + 3)
            .map(|i| [speed * (i as f64 - 1.0) * KNOT_INTERVAL_S, 0.0])
            .collect(),
    }
}

fn frame(t_s: f64, s_m: f64, l_m: f64, half_length_m: f64, half_width_m: f64) -> FrameSpec {
    FrameSpec {
        t_s,
        s_m,
        l_m,
        half_length_m,
        half_width_m,
    }
}

/// Lane occupancy of a car crossing at `s` between `t_in` and `t_out`.
fn crossing_window(id: &str, s: f64, t_in: f64, t_out: f64) -> ObstacleSpec {
    // along s the crossing car shows its width, across the lane it covers
    // the lane width while it passes
    ObstacleSpec {
        id: id.into(),
        is_static: false,
        inflated: false,
        beyond_horizon: HorizonPolicy::Vanish,
        frames: vec![frame(t_in, s, 0.0, 0.9, 3.5), frame(t_out, s, 0.0, 0.9, 3.5)],
    }
}

pub fn crossing() -> ScenarioFile {
    ScenarioFile {
        schema_version: SCHEMA_VERSION,
        meta: Meta {
            name: "crossing".into(),
            description: "Ego at 10 m/s with two vehicles crossing its lane ahead; \
                          the first crossing is reached at t = 2.9 s."
                .into(),
        },
        reference: straight_reference(10.0, 8.0),
        inflation: InflationSpec {
            s_offset_m: 2.25,
            l_offset_m: 2.0,
        },
        road: None,
        obstacles: vec![
            crossing_window("car_a", 32.15, 1.5, 3.2),
            crossing_window("car_b", 48.15, 3.5, 4.8),
        ],
        vehicle: vehicle(),
        limits: LimitsSpec {
            v_max_mps: 15.0,
            a_max_mps2: 4.0,
            j_max_mps3: 10.0,
        },
        weights: CostWeights {
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
        },
        shape: ShapeParams::default(),
        search: SearchConfig::default(),
        optimizer: OptimizerConfig::default(),
    }
}

pub fn road_damage() -> ScenarioFile {
    let neighbor_ahead = ObstacleSpec {
        id: "car_lane2".into(),
        is_static: false,
        inflated: false,
        beyond_horizon: HorizonPolicy::Persist,
        frames: vec![frame(0.0, 50.0, 3.5, 2.15, 0.84), frame(6.0, 140.0, 3.5, 2.15, 0.84)],
    };
    let merging = ObstacleSpec {
        id: "car_merging".into(),
        is_static: false,
        inflated: false,
        beyond_horizon: HorizonPolicy::Persist,
        frames: vec![
            frame(0.0, 85.0, 7.0, 2.15, 0.84),
            frame(0.5, 91.0, 7.0, 2.15, 0.84),
            frame(3.5, 127.0, 3.5, 2.15, 0.84),
            frame(6.0, 157.0, 3.5, 2.15, 0.84),
        ],
    };
    ScenarioFile {
        schema_version: SCHEMA_VERSION,
        meta: Meta {
            name: "road_damage".into(),
            description: "Ego at 15 m/s toward a damaged patch of its lane with the \
                          left lane open behind a car ahead and a merging car."
                .into(),
        },
        reference: straight_reference(15.0, 6.0),
        inflation: InflationSpec {
            s_offset_m: 8.0,
            l_offset_m: 2.0,
        },
        road: Some(RoadSpec {
            l_min_m: -1.75,
            l_max_m: 5.25,
        }),
        obstacles: vec![
            ObstacleSpec {
                id: "road_damage".into(),
                is_static: true,
                inflated: false,
                beyond_horizon: HorizonPolicy::Persist,
                frames: vec![frame(0.0, 32.5, -2.55, 1.0, 0.75)],
            },
            neighbor_ahead,
            merging,
        ],
        vehicle: vehicle(),
        limits: LimitsSpec {
            v_max_mps: 20.0,
            a_max_mps2: 6.0,
            j_max_mps3: 30.0,
        },
        weights: CostWeights {
            deformation: DeformationWeights {
                lambda_s: 1.0,
                lambda_c: 12.0,
                lambda_d: 0.5,
            },
            refinement: RefinementWeights {
                lambda_s: 1.0,
                lambda_d: 10.0,
                lambda_f: 0.01,
            },
            w_v: 1.0,
            w_a: 1.0,
            w_j: 1.0,
            s_f: 1.3,
            fit: FitWeights {
                axial: 1000.0,
                radial: 10000.0,
                samples: 32,
            },
        },
        shape: ShapeParams::default(),
        search: SearchConfig::default(),
        optimizer: OptimizerConfig::default(),
    }
}

/// The crossing scenario without the crossing vehicles.
pub fn no_conflict() -> ScenarioFile {
    let mut file = crossing();
    file.meta = Meta {
        name: "no_conflict".into(),
        description: "Ego at 10 m/s on an empty road.".into(),
    };
    file.obstacles.clear();
    file
}

/// The crossing scenario with a stalled car on top of the ego start.
pub fn start_in_collision() -> ScenarioFile {
    let mut file = crossing();
    file.meta = Meta {
        name: "start_in_collision".into(),
        description: "Ego starts inside the inflated footprint of a stalled car.".into(),
    };
    file.obstacles = vec![ObstacleSpec {
        id: "stalled_car".into(),
        is_static: true,
        inflated: false,
        beyond_horizon: HorizonPolicy::Persist,
        frames: vec![frame(0.0, 1.0, 0.0, 2.15, 0.84)],
    }];
    file
}

/// All built-in scenarios with their file names under `scenarios/`.
pub fn all() -> Vec<(&'static str, ScenarioFile)> {
    vec![
        ("crossing.json", crossing()),
        ("road_damage.json", road_damage()),
        ("no_conflict.json", no_conflict()),
        ("start_in_collision.json", start_in_collision()),
    ]
}
