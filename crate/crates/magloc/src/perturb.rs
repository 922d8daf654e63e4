//! Rotation perturbation scenarios applied to datasets before feature
//! extraction.
//!
//! Four kinds: a fixed per-axis rotation of the test split, a fixed-magnitude
//! random-axis rotation of both splits, time-varying random schedules on the
//! test split only, and time-varying schedules on both splits. Magnetometer
//! and accelerometer are always rotated jointly by the same rotation at the
//! same timestamp; positions are never touched.
//!
//! Convention: readings are rotated as v' = R.apply(v), which models a device
//! physically rotated by R inverse (a rotated device measures the world field
//! through the inverse of its own rotation).

use crate::data::{SampleRecord, Trial};
use crate::error::{Error, Result};
use crate::geometry::{
    random_unit_axis, rot_from_euler, sample_schedule, Rotation, RotationSchedule,
};
use crate::seed;
use serde::{Deserialize, Serialize};

/// Rotation axis selector for fixed-angle scenarios.
#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn letter(self) -> char {
        match self {
            Axis::X => 'x',
            Axis::Y => 'y',
            Axis::Z => 'z',
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ScenarioKind {
    /// Rotate every test sample by the composed fixed rotation with
    /// `angle_deg` applied to each listed axis; train untouched.
    FixedTest { axes: Vec<Axis>, angle_deg: f64 },
    /// Rotate each trial of both splits by a single rotation of magnitude
    /// `sigma_deg` about a per-trial uniformly random axis.
    FixedMagnitudeBoth { sigma_deg: f64 },
    /// Per-test-trial random schedule (knots every `period_s`, angles
    /// N(0, sigma)), interpolated per sample; train untouched.
    RandomTest { sigma_deg: f64, period_s: f64 },
    /// Independent random schedules for every trial of both splits.
    RandomBoth { sigma_deg: f64, period_s: f64 },
}

/// A perturbation scenario plus the master seed that makes it reproducible.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FlatScenario", into = "FlatScenario")]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub seed: u64,
}

/// Flat config form: {kind, sigma_deg, period_s, axes, angle_deg, seed}.
#[derive(Serialize, Deserialize, Clone)]
#[serde(deny_unknown_fields)]
struct FlatScenario {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigma_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    period_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    axes: Option<Vec<Axis>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    angle_deg: Option<f64>,
    seed: u64,
}

impl TryFrom<FlatScenario> for Scenario {
    type Error = Error;

    fn try_from(f: FlatScenario) -> Result<Scenario> {
        fn need<T>(v: Option<T>, name: &str, kind: &str) -> Result<T> {
            v.ok_or_else(|| {
                Error::Config(format!("scenario kind {:?} requires field {:?}", kind, name))
            })
        }
        fn refuse<T>(v: &Option<T>, name: &str, kind: &str) -> Result<()> {
            if v.is_some() {
                return Err(Error::Config(format!(
                    "field {:?} does not apply to scenario kind {:?}",
                    name, kind
                )));
            }
            Ok(())
        }
        let k = f.kind.as_str();
        let kind = match k {
            "fixed_test" => {
                refuse(&f.sigma_deg, "sigma_deg", k)?;
                refuse(&f.period_s, "period_s", k)?;
                ScenarioKind::FixedTest {
                    axes: need(f.axes, "axes", k)?,
                    angle_deg: need(f.angle_deg, "angle_deg", k)?,
                }
            }
            "fixed_magnitude_both" => {
                refuse(&f.axes, "axes", k)?;
                refuse(&f.angle_deg, "angle_deg", k)?;
                refuse(&f.period_s, "period_s", k)?;
                ScenarioKind::FixedMagnitudeBoth { sigma_deg: need(f.sigma_deg, "sigma_deg", k)? }
            }
            "random_test" | "random_both" => {
                refuse(&f.axes, "axes", k)?;
                refuse(&f.angle_deg, "angle_deg", k)?;
                let sigma_deg = need(f.sigma_deg, "sigma_deg", k)?;
                let period_s = need(f.period_s, "period_s", k)?;
                if k == "random_test" {
                    ScenarioKind::RandomTest { sigma_deg, period_s }
                } else {
                    ScenarioKind::RandomBoth { sigma_deg, period_s }
                }
            }
            other => return Err(Error::Config(format!("unknown scenario kind {:?}", other))),
        };
        let scenario = Scenario { kind, seed: f.seed };
        scenario.validate()?;
        Ok(scenario)
    }
}

impl From<Scenario> for FlatScenario {
    fn from(s: Scenario) -> FlatScenario {
        let mut f = FlatScenario {
            kind: String::new(),
            sigma_deg: None,
            period_s: None,
            axes: None,
            angle_deg: None,
            seed: s.seed,
        };
        match s.kind {
            ScenarioKind::FixedTest { axes, angle_deg } => {
                f.kind = "fixed_test".into();
                f.axes = Some(axes);
                f.angle_deg = Some(angle_deg);
            }
            ScenarioKind::FixedMagnitudeBoth { sigma_deg } => {
                f.kind = "fixed_magnitude_both".into();
                f.sigma_deg = Some(sigma_deg);
            }
            ScenarioKind::RandomTest { sigma_deg, period_s } => {
                f.kind = "random_test".into();
                f.sigma_deg = Some(sigma_deg);
                f.period_s = Some(period_s);
            }
            ScenarioKind::RandomBoth { sigma_deg, period_s } => {
                f.kind = "random_both".into();
                f.sigma_deg = Some(sigma_deg);
                f.period_s = Some(period_s);
            }
        }
        f
    }
}

fn fmt_num(x: f64) -> String {
    let s = if x == x.trunc() && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{}", x)
    };
    s.replace('.', "p").replace('-', "m")
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            ScenarioKind::FixedTest { axes, angle_deg } => {
                if axes.is_empty() {
                    return Err(Error::Config("fixed_test needs at least one axis".into()));
                }
                let mut sorted = axes.clone();
                sorted.sort();
                sorted.dedup();
                if sorted.len() != axes.len() {
                    return Err(Error::Config(format!("fixed_test axes repeat: {:?}", axes)));
                }
                if !angle_deg.is_finite() {
                    return Err(Error::Config(format!("angle_deg must be finite, got {}", angle_deg)));
                }
            }
            ScenarioKind::FixedMagnitudeBoth { sigma_deg } => {
                if !(*sigma_deg >= 0.0) || !sigma_deg.is_finite() {
                    return Err(Error::Config(format!("sigma_deg must be >= 0, got {}", sigma_deg)));
                }
            }
            ScenarioKind::RandomTest { sigma_deg, period_s }
            | ScenarioKind::RandomBoth { sigma_deg, period_s } => {
                if !(*sigma_deg >= 0.0) || !sigma_deg.is_finite() {
                    return Err(Error::Config(format!("sigma_deg must be >= 0, got {}", sigma_deg)));
                }
                if !(*period_s > 0.0) || !period_s.is_finite() {
                    return Err(Error::Config(format!("period_s must be > 0, got {}", period_s)));
                }
            }
        }
        Ok(())
    }

    /// Stable filename-safe label, e.g. "fixed_test_x88", "random_both_s5_t1".
    pub fn label(&self) -> String {
        match &self.kind {
            ScenarioKind::FixedTest { axes, angle_deg } => {
                let ax: String = axes.iter().map(|a| a.letter()).collect();
                format!("fixed_test_{}{}", ax, fmt_num(*angle_deg))
            }
            ScenarioKind::FixedMagnitudeBoth { sigma_deg } => {
                format!("fixed_both_s{}", fmt_num(*sigma_deg))
            }
            ScenarioKind::RandomTest { sigma_deg, period_s } => {
                format!("random_test_s{}_t{}", fmt_num(*sigma_deg), fmt_num(*period_s))
            }
            ScenarioKind::RandomBoth { sigma_deg, period_s } => {
                format!("random_both_s{}_t{}", fmt_num(*sigma_deg), fmt_num(*period_s))
            }
        }
    }

    /// The swept magnitude: angle for fixed_test, sigma otherwise.
    pub fn magnitude_deg(&self) -> f64 {
        match &self.kind {
            ScenarioKind::FixedTest { angle_deg, .. } => *angle_deg,
            ScenarioKind::FixedMagnitudeBoth { sigma_deg }
            | ScenarioKind::RandomTest { sigma_deg, .. }
            | ScenarioKind::RandomBoth { sigma_deg, .. } => *sigma_deg,
        }
    }

    /// Whether the scenario alters the training split.
    pub fn touches_train(&self) -> bool {
        matches!(
            self.kind,
            ScenarioKind::FixedMagnitudeBoth { .. } | ScenarioKind::RandomBoth { .. }
        )
    }
}

/// Audit record of what was applied to one trial.
#[derive(Clone, Debug)]
pub enum AppliedRotation {
    Identity,
    Fixed { rotation: Rotation, note: String },
    Schedule(RotationSchedule),
}

impl AppliedRotation {
    /// Schedule for CSV export, where one exists.
    pub fn schedule(&self) -> Option<&RotationSchedule> {
        match self {
            AppliedRotation::Schedule(s) => Some(s),
            _ => None,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            AppliedRotation::Identity => "identity".into(),
            AppliedRotation::Fixed { note, .. } => note.clone(),
            AppliedRotation::Schedule(s) => format!(
                "schedule sigma={} deg, period={} s, {} knots",
                s.knots.sigma_deg,
                s.knots.period_s,
                s.knots.len()
            ),
        }
    }
}

/// A rotated copy of a trial plus its audit record. Positions and timestamps
/// are identical to the source; per-sample |mag| is preserved.
#[derive(Clone, Debug)]
pub struct PerturbedTrial {
    pub trial: Trial,
    pub audit: AppliedRotation,
}

/// Drop audit records, keeping the rotated trials.
pub fn strip_audits(perturbed: Vec<PerturbedTrial>) -> Vec<Trial> {
    perturbed.into_iter().map(|p| p.trial).collect()
}

fn rotate_record(rec: &SampleRecord, r: &Rotation) -> SampleRecord {
    SampleRecord { t: rec.t, mag: r.apply(rec.mag), acc: r.apply(rec.acc), pos: rec.pos }
}

fn passthrough(trial: &Trial) -> PerturbedTrial {
    PerturbedTrial { trial: trial.clone(), audit: AppliedRotation::Identity }
}

fn fixed_rotation(trial: &Trial, r: Rotation, note: String) -> PerturbedTrial {
    let mut out = trial.clone();
    for rec in &mut out.records {
        *rec = rotate_record(rec, &r);
    }
    PerturbedTrial { trial: out, audit: AppliedRotation::Fixed { rotation: r, note } }
}

fn scheduled_rotation(trial: &Trial, sigma: f64, period: f64, seed: u64) -> Result<PerturbedTrial> {
    if trial.records.len() < 2 {
        return Err(Error::Data(format!(
            "{}/{}: a rotation schedule needs at least 2 samples",
            trial.building, trial.trial_id
        )));
    }
    let t0 = trial.records[0].t;
    let duration = trial.records.last().unwrap().t - t0;
    let schedule = sample_schedule(sigma, period, duration, seed)?;
    let mut out = trial.clone();
    for rec in &mut out.records {
        let r = schedule.rotation_at(rec.t - t0)?;
        *rec = rotate_record(rec, &r);
    }
    Ok(PerturbedTrial { trial: out, audit: AppliedRotation::Schedule(schedule) })
}

/// Seed for one trial's rotation, keyed by split and trial identity so adding
/// or reordering other trials never shifts it.
fn trial_seed(scenario_seed: u64, split: &str, trial: &Trial) -> u64 {
    let tag = format!("perturb-{}-{}-{}", split, trial.building, trial.trial_id);
    seed::derive(scenario_seed, &tag, 0)
}

fn perturb_trial(trial: &Trial, split: &str, is_train: bool, scenario: &Scenario) -> Result<PerturbedTrial> {
    match &scenario.kind {
        ScenarioKind::FixedTest { axes, angle_deg } => {
            if is_train {
                return Ok(passthrough(trial));
            }
            let pick = |a: Axis| if axes.contains(&a) { *angle_deg } else { 0.0 };
            let r = rot_from_euler(pick(Axis::X), pick(Axis::Y), pick(Axis::Z));
            let ax: String = axes.iter().map(|a| a.letter()).collect();
            Ok(fixed_rotation(trial, r, format!("fixed {} deg about {}", angle_deg, ax)))
        }
        ScenarioKind::FixedMagnitudeBoth { sigma_deg } => {
            let axis = random_unit_axis(trial_seed(scenario.seed, split, trial));
            let r = Rotation::from_axis_angle(axis, *sigma_deg);
            Ok(fixed_rotation(
                trial,
                r,
                format!(
                    "fixed {} deg about axis [{:.6}, {:.6}, {:.6}]",
                    sigma_deg, axis[0], axis[1], axis[2]
                ),
            ))
        }
        ScenarioKind::RandomTest { sigma_deg, period_s } => {
            if is_train {
                return Ok(passthrough(trial));
            }
            scheduled_rotation(trial, *sigma_deg, *period_s, trial_seed(scenario.seed, split, trial))
        }
        ScenarioKind::RandomBoth { sigma_deg, period_s } => {
            scheduled_rotation(trial, *sigma_deg, *period_s, trial_seed(scenario.seed, split, trial))
        }
    }
}

/// Apply a scenario to both splits. Pure function of (inputs, scenario):
/// rerunning with the same arguments reproduces every rotation bit for bit.
/// Empty splits pass through with a warning.
pub fn apply_scenario(
    train: &[Trial],
    test: &[Trial],
    scenario: &Scenario,
) -> Result<(Vec<PerturbedTrial>, Vec<PerturbedTrial>, Vec<String>)> {
    scenario.validate()?;
    let mut warnings = Vec::new();
    if train.is_empty() {
        warnings.push("train split is empty; nothing to perturb there".to_string());
    }
    if test.is_empty() {
        warnings.push("test split is empty; nothing to perturb there".to_string());
    }
    let train_out: Vec<PerturbedTrial> = train
        .iter()
        .map(|t| perturb_trial(t, "train", true, scenario))
        .collect::<Result<_>>()?;
    let test_out: Vec<PerturbedTrial> = test
        .iter()
        .map(|t| perturb_trial(t, "test", false, scenario))
        .collect::<Result<_>>()?;
    Ok((train_out, test_out, warnings))
}

/// Sweep-point descriptor: which kind to instantiate at each magnitude.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KindSpec {
    FixedTest { axes: Vec<Axis> },
    FixedMagnitudeBoth,
    RandomTest { period_s: f64 },
    RandomBoth { period_s: f64 },
}

/// Cross-product of kinds x magnitudes in stable (kinds-major) order, each
/// scenario seeded by hashing the master seed with its catalog index.
pub fn scenario_catalog(
    sigmas: &[f64],
    kinds: &[KindSpec],
    master_seed: u64,
) -> Result<Vec<Scenario>> {
    for s in sigmas {
        if !(*s >= 0.0) || !s.is_finite() {
            return Err(Error::Config(format!("catalog sigma must be >= 0, got {}", s)));
        }
    }
    let mut out = Vec::with_capacity(sigmas.len() * kinds.len());
    let mut index = 0u64;
    for kind in kinds {
        for &sigma in sigmas {
            let k = match kind {
                KindSpec::FixedTest { axes } => {
                    ScenarioKind::FixedTest { axes: axes.clone(), angle_deg: sigma }
                }
                KindSpec::FixedMagnitudeBoth => ScenarioKind::FixedMagnitudeBoth { sigma_deg: sigma },
                KindSpec::RandomTest { period_s } => {
                    ScenarioKind::RandomTest { sigma_deg: sigma, period_s: *period_s }
                }
                KindSpec::RandomBoth { period_s } => {
                    ScenarioKind::RandomBoth { sigma_deg: sigma, period_s: *period_s }
                }
            };
            let scenario = Scenario { kind: k, seed: seed::derive(master_seed, "scenario", index) };
            scenario.validate()?;
            out.push(scenario);
            index += 1;
        }
    }
    Ok(out)
}
