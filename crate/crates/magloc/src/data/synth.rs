//! Synthetic building generator: Earth field plus magnetostatic dipoles,
//! walked by a heading-aligned handheld device.
//!
//! Purpose-built for desk-scale end-to-end runs when no real dataset is
//! available. The field model is the standard point-dipole sum; dipoles sit
//! in the floor and ceiling (at least 2 m from the walking plane) so the
//! field stays in a realistic indoor range of tens of microtesla.

use super::{BuildingSet, SampleRecord, Trial, TARGET_RATE_HZ};
use crate::error::{Error, Result};
use crate::geometry::{norm3, Rotation, Vec3};
use crate::seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Height of the handheld device above the floor, meters.
pub const WALK_HEIGHT_M: f64 = 1.2;

/// Gravity magnitude, m/s^2; a static level accelerometer reads (0,0,-g).
pub const GRAVITY_MPS2: f64 = 9.81;

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Building id; keep the synthetic- prefix so size classes stay honest.
    pub building: String,
    /// Bounding box extents (x, y, z), meters.
    pub extent_m: Vec3,
    /// World-frame Earth field, microtesla.
    pub earth_field_ut: Vec3,
    pub dipole_count: usize,
    /// Dipole moment magnitude, microtesla * m^3.
    pub dipole_moment_scale: f64,
    /// Waypoints per trial trajectory.
    pub waypoint_count: usize,
    pub walking_speed_mps: f64,
    /// Accelerometer noise sigma, m/s^2.
    pub acc_noise_sigma: f64,
    /// Magnetometer noise sigma, microtesla.
    pub mag_noise_sigma: f64,
    pub trial_count: usize,
    /// Device yaw follows the walking direction; false keeps the device in
    /// the world frame (useful for field-model tests).
    pub heading_aligned_yaw: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            building: "synthetic-a".into(),
            extent_m: [40.0, 20.0, 3.0],
            earth_field_ut: [20.0, 4.0, -40.0],
            dipole_count: 8,
            dipole_moment_scale: 60.0,
            waypoint_count: 90,
            walking_speed_mps: 1.4,
            acc_noise_sigma: 0.15,
            mag_noise_sigma: 0.1,
            trial_count: 8,
            heading_aligned_yaw: true,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.extent_m.iter().any(|&e| !(e > 0.0)) {
            problems.push(format!("extents must be > 0, got {:?}", self.extent_m));
        }
        if !(self.walking_speed_mps > 0.0) {
            problems.push(format!("walking speed must be > 0, got {}", self.walking_speed_mps));
        }
        if self.waypoint_count < 2 {
            problems.push(format!("need at least 2 waypoints, got {}", self.waypoint_count));
        }
        if self.trial_count == 0 {
            problems.push("trial count must be >= 1".into());
        }
        if self.acc_noise_sigma < 0.0 || self.mag_noise_sigma < 0.0 {
            problems.push("noise sigmas must be >= 0".into());
        }
        if self.dipole_moment_scale < 0.0 {
            problems.push("dipole moment scale must be >= 0".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// Point dipole with moment in microtesla * m^3: field at `at` in microtesla
/// is (3 rhat (m . rhat) - m) / |at - pos|^3.
pub fn dipole_field(at: Vec3, pos: Vec3, moment: Vec3) -> Vec3 {
    let r = [at[0] - pos[0], at[1] - pos[1], at[2] - pos[2]];
    let d = norm3(r);
    let rhat = [r[0] / d, r[1] / d, r[2] / d];
    let mr = moment[0] * rhat[0] + moment[1] * rhat[1] + moment[2] * rhat[2];
    let d3 = d * d * d;
    [
        (3.0 * rhat[0] * mr - moment[0]) / d3,
        (3.0 * rhat[1] * mr - moment[1]) / d3,
        (3.0 * rhat[2] * mr - moment[2]) / d3,
    ]
}

/// Earth field plus every dipole contribution, world frame, microtesla.
pub fn world_field(earth: Vec3, dipoles: &[(Vec3, Vec3)], at: Vec3) -> Vec3 {
    let mut b = earth;
    for &(pos, moment) in dipoles {
        let d = dipole_field(at, pos, moment);
        b[0] += d[0];
        b[1] += d[1];
        b[2] += d[2];
    }
    b
}

/// Reference source distance for moment scaling. A dipole at distance d gets
/// moment scale * (d / REF)^3, so near and deep sources contribute comparable
/// peak field despite the cubic falloff.
pub const DIPOLE_REF_DEPTH_M: f64 = 2.75;

/// Deterministic dipole placement: (position, moment) pairs inside the
/// bounding box inflated by 2 m horizontally. Placement is stratified, one
/// dipole jittered inside each cell of the most-square grid covering the
/// inflated box, so the texture reaches the whole walking plane. Dipoles
/// alternate between a near band (floor/ceiling fixtures, 2.0 to 3.5 m off
/// the walking plane, sharp local anomalies) and a deep band (structural
/// steel and ground mass, 7 to 12 m below, smooth building-scale gradients);
/// moments grow with the cube of the distance so both bands matter.
pub fn dipole_layout(cfg: &SynthConfig) -> Vec<(Vec3, Vec3)> {
    let n = cfg.dipole_count;
    if n == 0 {
        return Vec::new();
    }
    let (w, h) = (cfg.extent_m[0] + 4.0, cfg.extent_m[1] + 4.0);
    let cols = ((n as f64 * w / h).sqrt().round() as usize).clamp(1, n);
    let rows = (n + cols - 1) / cols;
    let (cw, ch) = (w / cols as f64, h / rows as f64);
    (0..n)
        .map(|i| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, "synth-dipole", i as u64));
            let (cx, cy) = (i % cols, i / cols);
            let x = -2.0 + (cx as f64 + rng.gen_range(0.1..0.9)) * cw;
            let y = -2.0 + (cy as f64 + rng.gen_range(0.1..0.9)) * ch;
            let (dz, z) = if i % 2 == 0 {
                let dz = rng.gen_range(2.0..3.5);
                let z = if rng.gen::<bool>() { WALK_HEIGHT_M + dz } else { WALK_HEIGHT_M - dz };
                (dz, z)
            } else {
                let dz = rng.gen_range(7.0..12.0);
                (dz, WALK_HEIGHT_M - dz)
            };
            let normal = Normal::new(0.0, 1.0).unwrap();
            let dir = loop {
                let v: Vec3 =
                    [normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng)];
                let n = norm3(v);
                if n > 1e-6 {
                    break [v[0] / n, v[1] / n, v[2] / n];
                }
            };
            let m = cfg.dipole_moment_scale * (dz / DIPOLE_REF_DEPTH_M).powi(3);
            ([x, y, z], [dir[0] * m, dir[1] * m, dir[2] * m])
        })
        .collect()
}

/// Waypoints are a random walk over the building's corridor lattice: axis
/// aligned grid lines roughly 8 m apart, 1 m in from the walls, shared by
/// every trial of the building. Consecutive waypoints are adjacent lattice
/// nodes with a small per-visit jitter, so trials revisit the same corridors
/// the way building occupants do without retracing identical lines.
fn waypoints(cfg: &SynthConfig, trial_idx: u64) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, "synth-path", trial_idx));
    let margin = 1.0_f64.min(cfg.extent_m[0] / 4.0).min(cfg.extent_m[1] / 4.0);
    let span = [cfg.extent_m[0] - 2.0 * margin, cfg.extent_m[1] - 2.0 * margin];
    let nx = ((span[0] / 8.0).round() as usize + 1).max(2);
    let ny = ((span[1] / 8.0).round() as usize + 1).max(2);
    let step = [span[0] / (nx - 1) as f64, span[1] / (ny - 1) as f64];
    let jitter = 0.25_f64.min(margin / 2.0);
    let node = |ix: usize, iy: usize, rng: &mut ChaCha8Rng| -> Vec3 {
        [
            margin + ix as f64 * step[0] + rng.gen_range(-jitter..jitter),
            margin + iy as f64 * step[1] + rng.gen_range(-jitter..jitter),
            WALK_HEIGHT_M,
        ]
    };
    let (mut ix, mut iy) = (rng.gen_range(0..nx), rng.gen_range(0..ny));
    let mut pts: Vec<Vec3> = Vec::with_capacity(cfg.waypoint_count);
    let first = node(ix, iy, &mut rng);
    pts.push(first);
    let mut dir: Option<(i64, i64)> = None;
    while pts.len() < cfg.waypoint_count {
        let open: Vec<(i64, i64)> = [(1, 0), (-1, 0), (0, 1), (0, -1)]
            .into_iter()
            .filter(|&(dx, dy)| {
                let (jx, jy) = (ix as i64 + dx, iy as i64 + dy);
                jx >= 0 && jy >= 0 && (jx as usize) < nx && (jy as usize) < ny
            })
            .collect();
        // keep heading most of the time; otherwise turn, reversing only at
        // dead ends
        let keep = dir.filter(|d| open.contains(d) && rng.gen::<f64>() < 0.7);
        let (dx, dy) = keep.unwrap_or_else(|| {
            let turns: Vec<(i64, i64)> = open
                .iter()
                .copied()
                .filter(|&(dx, dy)| dir != Some((-dx, -dy)))
                .collect();
            let pool = if turns.is_empty() { &open } else { &turns };
            pool[rng.gen_range(0..pool.len())]
        });
        ix = (ix as i64 + dx) as usize;
        iy = (iy as i64 + dy) as usize;
        dir = Some((dx, dy));
        let p = node(ix, iy, &mut rng);
        pts.push(p);
    }
    pts
}

struct Polyline {
    points: Vec<Vec3>,
    cumulative: Vec<f64>,
}

impl Polyline {
    fn new(points: Vec<Vec3>) -> Polyline {
        let mut cumulative = vec![0.0];
        for w in points.windows(2) {
            let d = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
            cumulative.push(cumulative.last().unwrap() + d);
        }
        Polyline { points, cumulative }
    }

    fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// Position and heading (yaw degrees) at arc length `s`.
    fn at(&self, s: f64) -> (Vec3, f64) {
        let s = s.clamp(0.0, self.length());
        let mut i = match self.cumulative.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) => i.min(self.points.len() - 2),
            Err(i) => i - 1,
        };
        if i + 1 >= self.points.len() {
            i = self.points.len() - 2;
        }
        let (a, b) = (self.points[i], self.points[i + 1]);
        let seg = self.cumulative[i + 1] - self.cumulative[i];
        let u = if seg > 0.0 { (s - self.cumulative[i]) / seg } else { 0.0 };
        let pos = [a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1]), a[2] + u * (b[2] - a[2])];
        let yaw = (b[1] - a[1]).atan2(b[0] - a[0]).to_degrees();
        (pos, yaw)
    }
}

/// Generate a full building set. Pure function of the config, including its
/// seed: identical configs give bit-identical sets.
pub fn synth_generate(cfg: &SynthConfig) -> Result<BuildingSet> {
    cfg.validate()?;
    let dipoles = dipole_layout(cfg);
    let mut trials = Vec::with_capacity(cfg.trial_count);
    for trial_idx in 0..cfg.trial_count as u64 {
        let path = Polyline::new(waypoints(cfg, trial_idx));
        let duration = path.length() / cfg.walking_speed_mps;
        let steps = (duration * TARGET_RATE_HZ).floor() as usize;
        let mut mag_rng =
            ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, "synth-mag-noise", trial_idx));
        let mut acc_rng =
            ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, "synth-acc-noise", trial_idx));
        let mag_noise = Normal::new(0.0, cfg.mag_noise_sigma)
            .map_err(|e| Error::Config(format!("mag noise: {}", e)))?;
        let acc_noise = Normal::new(0.0, cfg.acc_noise_sigma)
            .map_err(|e| Error::Config(format!("acc noise: {}", e)))?;
        let mut records = Vec::with_capacity(steps + 1);
        for k in 0..=steps {
            let t = k as f64 / TARGET_RATE_HZ;
            let (pos, yaw_deg) = path.at(cfg.walking_speed_mps * t);
            let device = if cfg.heading_aligned_yaw {
                Rotation::from_axis_angle([0.0, 0.0, 1.0], yaw_deg)
            } else {
                Rotation::IDENTITY
            };
            let world_b = world_field(cfg.earth_field_ut, &dipoles, pos);
            let world_g = [0.0, 0.0, -GRAVITY_MPS2];
            // a device rotated by D measures v' = D^T v_world
            let inv = device.inverse();
            let mut mag = inv.apply(world_b);
            let mut acc = inv.apply(world_g);
            for a in 0..3 {
                mag[a] += mag_noise.sample(&mut mag_rng);
                acc[a] += acc_noise.sample(&mut acc_rng);
            }
            records.push(SampleRecord { t, mag, acc, pos });
        }
        trials.push(Trial {
            building: cfg.building.clone(),
            trial_id: (trial_idx + 1).to_string(),
            device: "handheld".into(),
            sample_rate_hz: TARGET_RATE_HZ,
            rate_flagged: false,
            records,
        });
    }
    Ok(BuildingSet {
        building: cfg.building.clone(),
        size_class: "synthetic".into(),
        bbox_min: [0.0, 0.0, 0.0],
        bbox_max: cfg.extent_m,
        trials,
    })
}
