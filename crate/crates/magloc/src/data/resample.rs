//! Linear resampling of a trial onto a uniform grid.

use super::{SampleRecord, Trial};
use crate::error::{Error, Result};

/// Resample every channel onto a uniform grid at `target_hz` spanning
/// [t_first, t_last]. Interpolation is linear and never extrapolates. The
/// returned trial is flagged when the native median spacing deviates more
/// than 5% from the target spacing.
pub fn resample_align(trial: &Trial, target_hz: f64) -> Result<Trial> {
    if trial.records.len() < 2 {
        return Err(Error::Data(format!(
            "{}/{}: resampling needs at least 2 records, got {}",
            trial.building,
            trial.trial_id,
            trial.records.len()
        )));
    }
    if !(target_hz > 0.0) {
        return Err(Error::Contract(format!("target rate must be > 0, got {}", target_hz)));
    }
    trial.validate()?;
    let raw = &trial.records;
    let (t0, t1) = (raw[0].t, raw[raw.len() - 1].t);
    // epsilon absorbs representation error in (t1 - t0) * hz at exact grids
    let steps = ((t1 - t0) * target_hz + 1e-9).floor() as usize;
    let mut records = Vec::with_capacity(steps + 1);
    let mut j = 0usize;
    for k in 0..=steps {
        let t = (t0 + k as f64 / target_hz).min(t1);
        while raw[j + 1].t < t && j + 2 < raw.len() {
            j += 1;
        }
        let (a, b) = (&raw[j], &raw[j + 1]);
        let u = (t - a.t) / (b.t - a.t);
        records.push(SampleRecord {
            t,
            mag: lerp3(a.mag, b.mag, u),
            acc: lerp3(a.acc, b.acc, u),
            pos: lerp3(a.pos, b.pos, u),
        });
    }
    let spacings: Vec<f64> = raw.windows(2).map(|w| w[1].t - w[0].t).collect();
    let median_dt = median(spacings);
    let target_dt = 1.0 / target_hz;
    Ok(Trial {
        building: trial.building.clone(),
        trial_id: trial.trial_id.clone(),
        device: trial.device.clone(),
        sample_rate_hz: target_hz,
        rate_flagged: (median_dt - target_dt).abs() > 0.05 * target_dt,
        records,
    })
}

fn lerp3(a: [f64; 3], b: [f64; 3], u: f64) -> [f64; 3] {
    [a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1]), a[2] + u * (b[2] - a[2])]
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
