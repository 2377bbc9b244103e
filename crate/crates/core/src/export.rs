//! Result export and the timing harness.
//!
//! `export_results` writes four files into the output directory:
//!
//! * `result.json`: summary, feasibility of the returned trajectory, the
//!   iteration table and optional timing statistics ([`ResultDocument`]).
//! * `stages.csv`: `stage,t_s,s_m,l_m,v_s_mps,v_l_mps,a_s_mps2,a_l_mps2` for
//!   the reference, deformed, refined and returned trajectories.
//! * `iterations.csv`: `iteration,t_rep_s,t_s,s_m,l_m,v_s_mps,v_l_mps,a_s_mps2,a_l_mps2`
//!   for every planner call that produced a trajectory.
//! * `gamma.json`: the returned trajectory as a scenario `reference` entry.
//!
//! All series are sampled on one grid `t0 + k·dt`; a curve contributes the
//! grid points inside its domain. Infinite times are written as `"inf"`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bspline::{SplineError, UniformBSpline};
use crate::fttr::{is_feasible, run_pipeline, FeasibilityReport, FttrResult, Termination};
use crate::repair::{CandidateStatus, RepairCandidate, RepairError};
use crate::scenario::{ReferenceSpec, Scenario};

pub const RESULT_FILE: &str = "result.json";
pub const STAGES_FILE: &str = "stages.csv";
pub const ITERATIONS_FILE: &str = "iterations.csv";
pub const GAMMA_FILE: &str = "gamma.json";

pub const STAGE_COLUMNS: [&str; 8] = [
    "stage", "t_s", "s_m", "l_m", "v_s_mps", "v_l_mps", "a_s_mps2", "a_l_mps2",
];
pub const ITERATION_COLUMNS: [&str; 9] = [
    "iteration",
    "t_rep_s",
    "t_s",
    "s_m",
    "l_m",
    "v_s_mps",
    "v_l_mps",
    "a_s_mps2",
    "a_l_mps2",
];

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("cannot write `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write `{path}`: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error(transparent)]
    Repair(#[from] RepairError),
}

/// Serializes non-finite values as `"inf"` / `"-inf"` / `"nan"` and reads
/// them back.
pub mod sentinel {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, ser: S) -> Result<S::Ok, S::Error> {
        if x.is_nan() {
            ser.serialize_str("nan")
        } else if x.is_infinite() {
            ser.serialize_str(if *x > 0.0 { "inf" } else { "-inf" })
        } else {
            ser.serialize_f64(*x)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<f64, D::Error> {
        match Repr::deserialize(de)? {
            Repr::Number(x) => Ok(x),
            Repr::Text(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!(
                    "expected a number or \"inf\", got \"{other}\""
                ))),
            },
        }
    }
}

/// Same as [`sentinel`] for optional values.
pub mod sentinel_opt {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Wrap(#[serde(with = "super::sentinel")] f64);

    pub fn serialize<S: Serializer>(x: &Option<f64>, ser: S) -> Result<S::Ok, S::Error> {
        x.map(Wrap).serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Option<f64>, D::Error> {
        Ok(Option::<Wrap>::deserialize(de)?.map(|w| w.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Search,
    Repair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IterationRow {
    pub iteration: usize,
    pub t_rep_s: f64,
    pub feasible: bool,
    pub status: Option<CandidateStatus>,
    pub t_start_s: f64,
    pub t_end_s: f64,
    pub elapsed_s: f64,
    pub deformation_iterations: usize,
    pub refinement_iterations: usize,
    /// Extremes of the candidate trajectory; absent when planning failed.
    pub min_speed_mps: Option<f64>,
    pub max_abs_a_s_mps2: Option<f64>,
    pub max_abs_a_l_mps2: Option<f64>,
    pub first_collision_s: Option<f64>,
    pub collision_obstacle: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingStats {
    pub runs: usize,
    pub total_mean_s: f64,
    pub total_std_s: f64,
    pub per_iteration_mean_s: f64,
    pub per_iteration_std_s: f64,
    /// Planner calls of the last run.
    pub planner_calls: usize,
    #[serde(with = "sentinel")]
    pub f_ttr_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultDocument {
    pub schema_version: u32,
    pub scenario: String,
    pub kind: RunKind,
    #[serde(with = "sentinel")]
    pub ttc_s: f64,
    /// Search result; absent for a fixed repair time.
    #[serde(with = "sentinel_opt")]
    pub f_ttr_s: Option<f64>,
    pub last_feasible_s: Option<f64>,
    #[serde(with = "sentinel_opt")]
    pub bracket_start_s: Option<f64>,
    #[serde(with = "sentinel_opt")]
    pub bracket_end_s: Option<f64>,
    pub terminated_by: Option<Termination>,
    pub unresolved: bool,
    /// Repair time of a fixed-time repair.
    pub t_rep_s: Option<f64>,
    pub status: Option<CandidateStatus>,
    pub planner_calls: usize,
    pub total_time_s: f64,
    pub gamma_feasibility: FeasibilityReport,
    pub iterations: Vec<IterationRow>,
    pub timing: Option<TimingStats>,
}

pub const RESULT_SCHEMA_VERSION: u32 = 1;

/// Everything `export_results` writes.
#[derive(Debug, Clone)]
pub struct ResultBundle {
    pub document: ResultDocument,
    /// Named curves for `stages.csv`.
    pub stages: Vec<(String, UniformBSpline)>,
    /// `(iteration, t_rep, trajectory)` for `iterations.csv`.
    pub iteration_profiles: Vec<(usize, f64, UniformBSpline)>,
    pub gamma: UniformBSpline,
    pub grid_dt: f64,
}

struct Extremes {
    min_speed: f64,
    max_a_s: f64,
    max_a_l: f64,
}

fn extremes(traj: &UniformBSpline, dt: f64) -> Result<Extremes, SplineError> {
    let mut e = Extremes {
        min_speed: f64::INFINITY,
        max_a_s: 0.0,
        max_a_l: 0.0,
    };
    for s in traj.sample(dt)? {
        e.min_speed = e.min_speed.min(s.velocity.norm());
        e.max_a_s = e.max_a_s.max(s.acceleration.s.abs());
        e.max_a_l = e.max_a_l.max(s.acceleration.l.abs());
    }
    Ok(e)
}

fn candidate_stages(reference: &UniformBSpline, candidate: &RepairCandidate) -> Vec<(String, UniformBSpline)> {
    vec![
        ("reference".into(), reference.clone()),
        ("deformed".into(), candidate.deformed.clone()),
        ("refined".into(), candidate.refined.clone()),
        ("gamma".into(), candidate.trajectory.clone()),
    ]
}

impl ResultBundle {
    /// Bundle for a search. Stages come from the candidate that produced the
    /// returned trajectory, if any.
    pub fn from_search(
        scenario: &Scenario,
        result: &FttrResult,
        timing: Option<TimingStats>,
    ) -> Result<Self, ExportError> {
        let dt = scenario.search.collision_check_dt;
        let mut rows = Vec::with_capacity(result.iterations.len());
        let mut profiles = Vec::new();
        for (k, it) in result.iterations.iter().enumerate() {
            let probe = &it.probe;
            let ext = match &probe.trajectory {
                Some(traj) => {
                    profiles.push((k, it.t_rep, traj.clone()));
                    Some(extremes(traj, dt)?)
                }
                None => None,
            };
            let candidate = probe.candidate.as_ref();
            rows.push(IterationRow {
                iteration: k,
                t_rep_s: it.t_rep,
                feasible: it.feasible,
                status: probe.status,
                t_start_s: it.t_start,
                t_end_s: it.t_end,
                elapsed_s: it.elapsed_s,
                deformation_iterations: candidate.map_or(0, |c| c.deformation_iterations()),
                refinement_iterations: candidate.map_or(0, |c| c.refinement_iterations()),
                min_speed_mps: ext.as_ref().map(|e| e.min_speed),
                max_abs_a_s_mps2: ext.as_ref().map(|e| e.max_a_s),
                max_abs_a_l_mps2: ext.as_ref().map(|e| e.max_a_l),
                first_collision_s: probe.report.as_ref().and_then(|r| r.first_collision),
                collision_obstacle: probe.report.as_ref().and_then(|r| r.collision_obstacle.clone()),
                error: probe.error.clone(),
            });
        }
        let source = result
            .last_feasible
            .and_then(|t| result.iterations.iter().rev().find(|it| it.feasible && it.t_rep == t))
            .and_then(|it| it.probe.candidate.as_ref());
        let stages = match source {
            Some(c) => candidate_stages(&scenario.reference, c),
            None => vec![
                ("reference".into(), scenario.reference.clone()),
                ("gamma".into(), result.gamma.clone()),
            ],
        };
        let document = ResultDocument {
            schema_version: RESULT_SCHEMA_VERSION,
            scenario: scenario.name().to_string(),
            kind: RunKind::Search,
            ttc_s: result.ttc,
            f_ttr_s: Some(result.f_ttr),
            last_feasible_s: result.last_feasible,
            bracket_start_s: Some(result.t_start),
            bracket_end_s: Some(result.t_end),
            terminated_by: Some(result.terminated_by),
            unresolved: result.unresolved,
            t_rep_s: None,
            status: None,
            planner_calls: result.planner_calls(),
            total_time_s: result.total_time_s,
            gamma_feasibility: is_feasible(&result.gamma, &scenario.obstacles, &scenario.limits, dt)?,
            iterations: rows,
            timing,
        };
        Ok(Self {
            document,
            stages,
            iteration_profiles: profiles,
            gamma: result.gamma.clone(),
            grid_dt: dt,
        })
    }

    /// Bundle for a single repair at `t_rep` (relative to the reference start).
    pub fn from_repair(
        scenario: &Scenario,
        t_rep: f64,
        candidate: &RepairCandidate,
        elapsed_s: f64,
    ) -> Result<Self, ExportError> {
        let dt = scenario.search.collision_check_dt;
        let report = is_feasible(&candidate.trajectory, &scenario.obstacles, &scenario.limits, dt)?;
        let ext = extremes(&candidate.trajectory, dt)?;
        let ttc =
            crate::cspace::detect_collision(&scenario.reference, &scenario.obstacles, dt).map_err(RepairError::from)?;
        let row = IterationRow {
            iteration: 0,
            t_rep_s: t_rep,
            feasible: report.overall && !candidate.status.is_flagged(),
            status: Some(candidate.status),
            t_start_s: 0.0,
            t_end_s: ttc,
            elapsed_s,
            deformation_iterations: candidate.deformation_iterations(),
            refinement_iterations: candidate.refinement_iterations(),
            min_speed_mps: Some(ext.min_speed),
            max_abs_a_s_mps2: Some(ext.max_a_s),
            max_abs_a_l_mps2: Some(ext.max_a_l),
            first_collision_s: report.first_collision,
            collision_obstacle: report.collision_obstacle.clone(),
            error: None,
        };
        let document = ResultDocument {
            schema_version: RESULT_SCHEMA_VERSION,
            scenario: scenario.name().to_string(),
            kind: RunKind::Repair,
            ttc_s: ttc,
            f_ttr_s: None,
            last_feasible_s: None,
            bracket_start_s: None,
            bracket_end_s: None,
            terminated_by: None,
            unresolved: false,
            t_rep_s: Some(t_rep),
            status: Some(candidate.status),
            planner_calls: 1,
            total_time_s: elapsed_s,
            gamma_feasibility: report,
            iterations: vec![row],
            timing: None,
        };
        Ok(Self {
            document,
            stages: candidate_stages(&scenario.reference, candidate),
            iteration_profiles: vec![(0, t_rep, candidate.trajectory.clone())],
            gamma: candidate.trajectory.clone(),
            grid_dt: dt,
        })
    }

    fn grid_origin(&self) -> f64 {
        self.stages
            .iter()
            .map(|(_, s)| s.t_start())
            .chain(self.iteration_profiles.iter().map(|(_, _, s)| s.t_start()))
            .fold(self.gamma.t_start(), f64::min)
    }
}

/// Samples `traj` at the grid points `origin + k·dt` inside its domain.
fn grid_rows(traj: &UniformBSpline, origin: f64, dt: f64) -> Result<Vec<[f64; 7]>, SplineError> {
    let kin = traj.kinematics();
    let first = ((traj.t_start() - origin) / dt - 1e-9).ceil().max(0.0) as usize;
    let mut rows = Vec::new();
    let mut k = first;
    loop {
        let t = origin + k as f64 * dt;
        if t > traj.t_end() + 1e-9 {
            break;
        }
        let t = t.clamp(traj.t_start(), traj.t_end());
        let s = kin.at(t)?;
        rows.push([
            origin + k as f64 * dt,
            s.position.s,
            s.position.l,
            s.velocity.s,
            s.velocity.l,
            s.acceleration.s,
            s.acceleration.l,
        ]);
        k += 1;
    }
    Ok(rows)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExportError + '_ {
    move |source| ExportError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> ExportError + '_ {
    move |source| ExportError::Csv {
        path: path.display().to_string(),
        source,
    }
}

/// Writes the bundle into `out_dir` (created if missing) and returns the
/// written paths.
pub fn export_results(bundle: &ResultBundle, out_dir: &Path) -> Result<Vec<PathBuf>, ExportError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let origin = bundle.grid_origin();
    let dt = bundle.grid_dt;

    let result_path = out_dir.join(RESULT_FILE);
    let mut text = serde_json::to_string_pretty(&bundle.document).expect("result document serializes");
    text.push('\n');
    fs::write(&result_path, text).map_err(io_err(&result_path))?;

    let stages_path = out_dir.join(STAGES_FILE);
    let mut w = csv::Writer::from_path(&stages_path).map_err(csv_err(&stages_path))?;
    w.write_record(STAGE_COLUMNS).map_err(csv_err(&stages_path))?;
    for (name, traj) in &bundle.stages {
        for row in grid_rows(traj, origin, dt)? {
            let mut record = vec![name.clone()];
            record.extend(row.iter().map(|x| x.to_string()));
            w.write_record(&record).map_err(csv_err(&stages_path))?;
        }
    }
    w.flush().map_err(io_err(&stages_path))?;

    let iterations_path = out_dir.join(ITERATIONS_FILE);
    let mut w = csv::Writer::from_path(&iterations_path).map_err(csv_err(&iterations_path))?;
    w.write_record(ITERATION_COLUMNS).map_err(csv_err(&iterations_path))?;
    for (k, t_rep, traj) in &bundle.iteration_profiles {
        for row in grid_rows(traj, origin, dt)? {
            let mut record = vec![k.to_string(), t_rep.to_string()];
            record.extend(row.iter().map(|x| x.to_string()));
            w.write_record(&record).map_err(csv_err(&iterations_path))?;
        }
    }
    w.flush().map_err(io_err(&iterations_path))?;

    let gamma_path = out_dir.join(GAMMA_FILE);
    let mut text = serde_json::to_string_pretty(&ReferenceSpec::from_spline(&bundle.gamma)).expect("spline serializes");
    text.push('\n');
    fs::write(&gamma_path, text).map_err(io_err(&gamma_path))?;

    Ok(vec![result_path, stages_path, iterations_path, gamma_path])
}

/// Reads a result document written by [`export_results`].
pub fn read_result_document(path: &Path) -> Result<ResultDocument, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| format!("{}: {} at `{}`", path.display(), e.inner(), e.path()))
}

/// Mean and unbiased standard deviation; the deviation is zero for fewer
/// than two values.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs the full search `runs` times (after one untimed warm-up run) and
/// reports total search time and mean planner-call time per run.
pub fn timing_harness(scenario: &Scenario, runs: usize) -> Result<(TimingStats, FttrResult), RepairError> {
    if runs < 2 {
        return Err(RepairError::InvalidRequest(format!(
            "runs must be at least 2, got {runs}"
        )));
    }
    let mut last = run_pipeline(scenario)?;
    let mut totals = Vec::with_capacity(runs);
    let mut per_call = Vec::with_capacity(runs);
    for _ in 0..runs {
        last = run_pipeline(scenario)?;
        totals.push(last.total_time_s);
        let calls = last.planner_calls();
        per_call.push(if calls == 0 {
            0.0
        } else {
            last.iterations.iter().map(|it| it.elapsed_s).sum::<f64>() / calls as f64
        });
    }
    let (total_mean_s, total_std_s) = mean_std(&totals);
    let (per_iteration_mean_s, per_iteration_std_s) = mean_std(&per_call);
    Ok((
        TimingStats {
            runs,
            total_mean_s,
            total_std_s,
            per_iteration_mean_s,
            per_iteration_std_s,
            planner_calls: last.planner_calls(),
            f_ttr_s: last.f_ttr,
        },
        last,
    ))
}
