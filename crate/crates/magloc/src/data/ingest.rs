//! Column-map-driven ingestion of per-trial delimited text files.
//!
//! The dataset's exact file layout is not standardized, so the adapter is
//! configured by a column map naming the timestamp, magnetometer,
//! accelerometer, and ground-truth position columns plus their units.
//! Everything is converted to (s, microtesla, m/s^2, m) on the way in.

use super::{BuildingSet, SampleRecord, Trial};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum TimeUnit {
    S,
    Ms,
    Us,
    Ns,
}

impl TimeUnit {
    fn to_seconds(self) -> f64 {
        match self {
            TimeUnit::S => 1.0,
            TimeUnit::Ms => 1e-3,
            TimeUnit::Us => 1e-6,
            TimeUnit::Ns => 1e-9,
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum MagUnit {
    Ut,
    Nt,
    Gauss,
}

impl MagUnit {
    fn to_microtesla(self) -> f64 {
        match self {
            MagUnit::Ut => 1.0,
            MagUnit::Nt => 1e-3,
            MagUnit::Gauss => 100.0,
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum AccUnit {
    Mps2,
    G,
}

impl AccUnit {
    fn to_mps2(self) -> f64 {
        match self {
            AccUnit::Mps2 => 1.0,
            AccUnit::G => 9.80665,
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum LenUnit {
    M,
    Cm,
    Mm,
}

impl LenUnit {
    fn to_meters(self) -> f64 {
        match self {
            LenUnit::M => 1.0,
            LenUnit::Cm => 1e-2,
            LenUnit::Mm => 1e-3,
        }
    }
}

/// Best-effort default schema; validate against the actual download before
/// trusting it.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ColumnMap {
    pub delimiter: char,
    pub time: String,
    pub time_unit: TimeUnit,
    pub mag: [String; 3],
    pub mag_unit: MagUnit,
    pub acc: [String; 3],
    pub acc_unit: AccUnit,
    pub pos: [String; 3],
    pub pos_unit: LenUnit,
    pub device: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            delimiter: ',',
            time: "t".into(),
            time_unit: TimeUnit::S,
            mag: ["mag_x".into(), "mag_y".into(), "mag_z".into()],
            mag_unit: MagUnit::Ut,
            acc: ["acc_x".into(), "acc_y".into(), "acc_z".into()],
            acc_unit: AccUnit::Mps2,
            pos: ["pos_x".into(), "pos_y".into(), "pos_z".into()],
            pos_unit: LenUnit::M,
            device: "handheld".into(),
        }
    }
}

fn size_class_of(building: &str) -> &'static str {
    match building {
        "CSL" => "small",
        "Talbot" => "medium",
        "Loomis" => "large",
        _ => "unknown",
    }
}

/// Ingest every `*.csv` under `root` as one trial each; building id is the
/// directory name. Trials with duplicated timestamps are rejected with a
/// diagnostic in the warning list instead of failing the whole building.
pub fn ingest_magpie(root: &Path, map: &ColumnMap) -> Result<(BuildingSet, Vec<String>)> {
    let building = root
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Ingest(format!("{}: no building name", root.display())))?
        .to_string();
    let mut files: Vec<_> = fs::read_dir(root)
        .map_err(|e| Error::Ingest(format!("{}: {}", root.display(), e)))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|x| x.to_str()) == Some("csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Ingest(format!("{}: no .csv trial files", root.display())));
    }
    let mut trials = Vec::new();
    let mut warnings = Vec::new();
    for file in &files {
        let trial_id = file
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("unnamed")
            .to_string();
        match parse_trial_file(file, map, &building, &trial_id) {
            Ok(trial) => trials.push(trial),
            Err(Error::Data(msg)) => warnings.push(format!("trial {} rejected: {}", trial_id, msg)),
            Err(e) => return Err(e),
        }
    }
    let (bbox_min, bbox_max) = BuildingSet::bbox_from_positions(&trials);
    Ok((
        BuildingSet {
            size_class: size_class_of(&building).to_string(),
            building,
            bbox_min,
            bbox_max,
            trials,
        },
        warnings,
    ))
}

/// Parse one delimited trial file: locate mapped columns, convert units,
/// stable-sort by time. Duplicate timestamps after the sort are a Data
/// error (the caller downgrades it to a rejection warning).
pub fn parse_trial_file(
    path: &Path,
    map: &ColumnMap,
    building: &str,
    trial_id: &str,
) -> Result<Trial> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(map.delimiter as u8)
        .trim(csv::Trim::All)
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Ingest(format!("{}: {}", path.display(), e)))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Ingest(format!("{}: {}", path.display(), e)))?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::Ingest(format!("{}: mapped column {:?} not found", path.display(), name))
        })
    };
    let it = col(&map.time)?;
    let im = [col(&map.mag[0])?, col(&map.mag[1])?, col(&map.mag[2])?];
    let ia = [col(&map.acc[0])?, col(&map.acc[1])?, col(&map.acc[2])?];
    let ip = [col(&map.pos[0])?, col(&map.pos[1])?, col(&map.pos[2])?];

    let (ft, fm, fa, fp) = (
        map.time_unit.to_seconds(),
        map.mag_unit.to_microtesla(),
        map.acc_unit.to_mps2(),
        map.pos_unit.to_meters(),
    );
    let mut records = Vec::new();
    for (row_idx, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::Ingest(format!("{}: {}", path.display(), e)))?;
        let cell = |i: usize| -> Result<f64> {
            let raw = row.get(i).ok_or_else(|| {
                Error::Ingest(format!("{}: row {} too short", path.display(), row_idx + 2))
            })?;
            raw.parse().map_err(|_| {
                Error::Ingest(format!(
                    "{}: row {} column {:?}: {:?} is not a number",
                    path.display(),
                    row_idx + 2,
                    headers.get(i).unwrap_or(""),
                    raw
                ))
            })
        };
        records.push(SampleRecord {
            t: cell(it)? * ft,
            mag: [cell(im[0])? * fm, cell(im[1])? * fm, cell(im[2])? * fm],
            acc: [cell(ia[0])? * fa, cell(ia[1])? * fa, cell(ia[2])? * fa],
            pos: [cell(ip[0])? * fp, cell(ip[1])? * fp, cell(ip[2])? * fp],
        });
    }
    if records.len() < 2 {
        return Err(Error::Data(format!("{}: fewer than 2 rows", path.display())));
    }
    records.sort_by(|a, b| a.t.total_cmp(&b.t));
    let spacings: Vec<f64> = records.windows(2).map(|w| w[1].t - w[0].t).collect();
    if spacings.iter().any(|&d| d <= 0.0) {
        return Err(Error::Data(format!(
            "{}: timestamps not strictly increasing after sort-stabilization",
            path.display()
        )));
    }
    let trial = Trial {
        building: building.to_string(),
        trial_id: trial_id.to_string(),
        device: map.device.clone(),
        sample_rate_hz: 1.0 / median(spacings),
        rate_flagged: false,
        records,
    };
    trial.validate()?;
    Ok(trial)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
