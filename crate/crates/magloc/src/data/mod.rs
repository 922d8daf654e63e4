//! Uniform trial model at 50 Hz, fed either by dataset ingestion or by the
//! synthetic building generator.
//!
//! Normalized on-disk form: one CSV per trial with the fixed header
//! `t,mag_x,mag_y,mag_z,acc_x,acc_y,acc_z,pos_x,pos_y,pos_z` plus a
//! `set.json` sidecar carrying the building metadata, so every downstream
//! stage is dataset-agnostic.

pub mod ingest;
pub mod resample;
pub mod synth;

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub const TARGET_RATE_HZ: f64 = 50.0;
pub const NORMALIZED_HEADER: &str = "t,mag_x,mag_y,mag_z,acc_x,acc_y,acc_z,pos_x,pos_y,pos_z";

/// One aligned sensor sample. Units: seconds, microtesla, m/s^2, meters.
/// `pos.z` is carried through but the regression target is (x, y).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleRecord {
    pub t: f64,
    pub mag: Vec3,
    pub acc: Vec3,
    pub pos: Vec3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    pub building: String,
    pub trial_id: String,
    pub device: String,
    pub sample_rate_hz: f64,
    /// Native spacing deviated more than 5% from the target grid.
    pub rate_flagged: bool,
    pub records: Vec<SampleRecord>,
}

impl Trial {
    pub fn duration(&self) -> f64 {
        match (self.records.first(), self.records.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    /// Timestamps strictly increasing and all components finite.
    pub fn validate(&self) -> Result<()> {
        let mut prev = f64::NEG_INFINITY;
        for (i, r) in self.records.iter().enumerate() {
            if !(r.t > prev) {
                return Err(Error::Data(format!(
                    "{}/{}: non-monotone timestamp at row {}",
                    self.building, self.trial_id, i
                )));
            }
            prev = r.t;
            let finite = r.t.is_finite()
                && r.mag.iter().all(|v| v.is_finite())
                && r.acc.iter().all(|v| v.is_finite())
                && r.pos.iter().all(|v| v.is_finite());
            if !finite {
                return Err(Error::Data(format!(
                    "{}/{}: non-finite value at row {}",
                    self.building, self.trial_id, i
                )));
            }
        }
        Ok(())
    }
}

/// All trials of one building plus its geometry metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct BuildingSet {
    pub building: String,
    pub size_class: String,
    pub bbox_min: Vec3,
    pub bbox_max: Vec3,
    pub trials: Vec<Trial>,
}

impl BuildingSet {
    /// Horizontal diagonal of the bounding box, the scale MAE is judged
    /// against.
    pub fn diagonal_xy(&self) -> f64 {
        let dx = self.bbox_max[0] - self.bbox_min[0];
        let dy = self.bbox_max[1] - self.bbox_min[1];
        (dx * dx + dy * dy).sqrt()
    }

    pub fn bbox_from_positions(trials: &[Trial]) -> (Vec3, Vec3) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for t in trials {
            for r in &t.records {
                for a in 0..3 {
                    lo[a] = lo[a].min(r.pos[a]);
                    hi[a] = hi[a].max(r.pos[a]);
                }
            }
        }
        (lo, hi)
    }
}

/// Trials the standard configuration drops before any split.
pub fn default_exclusions() -> Vec<(String, String)> {
    (8..=11).map(|n| ("Loomis".to_string(), n.to_string())).collect()
}

/// Remove listed (building, trial id) pairs. Unknown entries produce a
/// warning, not a failure.
pub fn exclude_trials(
    mut set: BuildingSet,
    exclusions: &[(String, String)],
) -> (BuildingSet, Vec<String>) {
    let mut warnings = Vec::new();
    for (b, id) in exclusions {
        if b != &set.building {
            continue;
        }
        let before = set.trials.len();
        set.trials.retain(|t| &t.trial_id != id);
        if set.trials.len() == before {
            warnings.push(format!("exclusion {}/{} matched no trial", b, id));
        }
    }
    if set.trials.is_empty() {
        warnings.push(format!("building {} has no trials left after exclusion", set.building));
    }
    (set, warnings)
}

#[derive(Serialize, Deserialize, Clone, Debug)]
#[serde(deny_unknown_fields)]
struct SetMeta {
    building: String,
    size_class: String,
    bbox_min: Vec3,
    bbox_max: Vec3,
    trials: Vec<TrialMeta>,
}

#[derive(Serialize, Deserialize, Clone, Debug)]
#[serde(deny_unknown_fields)]
struct TrialMeta {
    trial_id: String,
    device: String,
    sample_rate_hz: f64,
    rate_flagged: bool,
    file: String,
}

/// Persist a building set: per-trial fixed-header CSVs plus `set.json`.
pub fn write_normalized(set: &BuildingSet, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut metas = Vec::with_capacity(set.trials.len());
    for trial in &set.trials {
        let file = format!("{}_{}.csv", set.building, trial.trial_id);
        let mut w = BufWriter::new(fs::File::create(dir.join(&file))?);
        writeln!(w, "{}", NORMALIZED_HEADER)?;
        for r in &trial.records {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                r.t,
                r.mag[0],
                r.mag[1],
                r.mag[2],
                r.acc[0],
                r.acc[1],
                r.acc[2],
                r.pos[0],
                r.pos[1],
                r.pos[2]
            )?;
        }
        w.flush()?;
        metas.push(TrialMeta {
            trial_id: trial.trial_id.clone(),
            device: trial.device.clone(),
            sample_rate_hz: trial.sample_rate_hz,
            rate_flagged: trial.rate_flagged,
            file,
        });
    }
    let meta = SetMeta {
        building: set.building.clone(),
        size_class: set.size_class.clone(),
        bbox_min: set.bbox_min,
        bbox_max: set.bbox_max,
        trials: metas,
    };
    fs::write(dir.join("set.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

/// Load a building set previously written by `write_normalized`.
pub fn read_normalized(dir: &Path) -> Result<BuildingSet> {
    let meta_path = dir.join("set.json");
    let meta: SetMeta = serde_json::from_str(&fs::read_to_string(&meta_path).map_err(|e| {
        Error::Data(format!("{}: {}", meta_path.display(), e))
    })?)?;
    let mut trials = Vec::with_capacity(meta.trials.len());
    for tm in &meta.trials {
        let path = dir.join(&tm.file);
        let records = read_normalized_records(&path)?;
        trials.push(Trial {
            building: meta.building.clone(),
            trial_id: tm.trial_id.clone(),
            device: tm.device.clone(),
            sample_rate_hz: tm.sample_rate_hz,
            rate_flagged: tm.rate_flagged,
            records,
        });
    }
    Ok(BuildingSet {
        building: meta.building,
        size_class: meta.size_class,
        bbox_min: meta.bbox_min,
        bbox_max: meta.bbox_max,
        trials,
    })
}

fn read_normalized_records(path: &Path) -> Result<Vec<SampleRecord>> {
    let reader = BufReader::new(
        fs::File::open(path).map_err(|e| Error::Data(format!("{}: {}", path.display(), e)))?,
    );
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Data(format!("{}: empty file", path.display())))??;
    if header.trim() != NORMALIZED_HEADER {
        return Err(Error::Data(format!(
            "{}: header {:?} is not the normalized schema",
            path.display(),
            header
        )));
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut vals = [0.0f64; 10];
        let mut parts = line.split(',');
        for (k, slot) in vals.iter_mut().enumerate() {
            let cell = parts.next().ok_or_else(|| {
                Error::Data(format!("{}: row {} has fewer than 10 fields", path.display(), i + 2))
            })?;
            *slot = cell.trim().parse().map_err(|_| {
                Error::Data(format!(
                    "{}: row {} field {}: {:?} is not a number",
                    path.display(),
                    i + 2,
                    k,
                    cell
                ))
            })?;
        }
        if parts.next().is_some() {
            return Err(Error::Data(format!(
                "{}: row {} has more than 10 fields",
                path.display(),
                i + 2
            )));
        }
        records.push(SampleRecord {
            t: vals[0],
            mag: [vals[1], vals[2], vals[3]],
            acc: [vals[4], vals[5], vals[6]],
            pos: [vals[7], vals[8], vals[9]],
        });
    }
    Ok(records)
}
