//! Rotation algebra and time-indexed random-rotation schedules.
//!
//! Conventions, fixed once so every scenario is reproducible:
//! - Euler angles are intrinsic Z-Y-X (yaw, then pitch, then roll), degrees.
//! - Interpolation between schedule knots is linear per Euler angle, not
//!   spherical.
//! - All rotation math runs in f64.

use crate::error::{Error, Result};
use crate::seed;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::io::Write;

pub type Vec3 = [f64; 3];

pub fn norm3(v: Vec3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub fn dot3(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Unit quaternion; norm stays 1 within 1e-9 after every construction and
/// composition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Rotation {
    pub const IDENTITY: Rotation = Rotation { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    fn normalized(w: f64, x: f64, y: f64, z: f64) -> Rotation {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        Rotation { w: w / n, x: x / n, y: y / n, z: z / n }
    }

    /// Rotation about a single axis by `angle_deg` (right-handed, active).
    pub fn from_axis_angle(axis: Vec3, angle_deg: f64) -> Rotation {
        let n = norm3(axis);
        let half = angle_deg.to_radians() / 2.0;
        let s = half.sin() / n;
        Rotation::normalized(half.cos(), axis[0] * s, axis[1] * s, axis[2] * s)
    }

    /// Hamilton product: `self` applied after `rhs`.
    pub fn compose(self, rhs: Rotation) -> Rotation {
        let (aw, ax, ay, az) = (self.w, self.x, self.y, self.z);
        let (bw, bx, by, bz) = (rhs.w, rhs.x, rhs.y, rhs.z);
        Rotation::normalized(
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        )
    }

    pub fn inverse(self) -> Rotation {
        Rotation { w: self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    pub fn norm(self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    /// Rotate a 3-vector: v' = q v q*.
    pub fn apply(self, v: Vec3) -> Vec3 {
        // expanded sandwich product, no intermediate quaternion
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        let tx = 2.0 * (y * v[2] - z * v[1]);
        let ty = 2.0 * (z * v[0] - x * v[2]);
        let tz = 2.0 * (x * v[1] - y * v[0]);
        [
            v[0] + w * tx + y * tz - z * ty,
            v[1] + w * ty + z * tx - x * tz,
            v[2] + w * tz + x * ty - y * tx,
        ]
    }
}

/// Intrinsic Z-Y-X Euler composition: yaw about z, pitch about the new y,
/// roll about the newest x. Angles in degrees.
pub fn rot_from_euler(roll_deg: f64, pitch_deg: f64, yaw_deg: f64) -> Rotation {
    let qz = Rotation::from_axis_angle([0.0, 0.0, 1.0], yaw_deg);
    let qy = Rotation::from_axis_angle([0.0, 1.0, 0.0], pitch_deg);
    let qx = Rotation::from_axis_angle([1.0, 0.0, 0.0], roll_deg);
    qz.compose(qy).compose(qx)
}

/// Evenly spaced Euler-angle knots: angles (roll, pitch, yaw) in degrees at
/// times n * period_s.
#[derive(Clone, Debug, PartialEq)]
pub struct EulerKnots {
    pub sigma_deg: f64,
    pub period_s: f64,
    angles: Vec<Vec3>,
}

impl EulerKnots {
    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.period_s
    }

    pub fn angles(&self, n: usize) -> Vec3 {
        self.angles[n]
    }
}

/// Piecewise-linear (per Euler angle) rotation trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct RotationSchedule {
    pub knots: EulerKnots,
}

impl RotationSchedule {
    /// Hand-built schedule from explicit knot angles (degrees), spaced
    /// `period_s` apart. `sigma_deg` is carried as metadata only.
    pub fn from_knots(sigma_deg: f64, period_s: f64, angles: Vec<Vec3>) -> Result<Self> {
        if angles.len() < 2 {
            return Err(Error::Contract(format!(
                "schedule needs at least 2 knots, got {}",
                angles.len()
            )));
        }
        if !(period_s > 0.0) {
            return Err(Error::Contract(format!("period must be > 0, got {}", period_s)));
        }
        Ok(RotationSchedule { knots: EulerKnots { sigma_deg, period_s, angles } })
    }

    pub fn duration(&self) -> f64 {
        self.knots.time(self.knots.len() - 1)
    }

    /// Interpolated (roll, pitch, yaw) in degrees at time `t`.
    pub fn angles_at(&self, t: f64) -> Result<Vec3> {
        let last = self.duration();
        if !t.is_finite() || t < 0.0 || t > last {
            return Err(Error::Contract(format!(
                "schedule query t={} outside [0, {}]",
                t, last
            )));
        }
        let period = self.knots.period_s;
        let mut i = (t / period).floor() as usize;
        if i + 1 >= self.knots.len() {
            i = self.knots.len() - 2;
        }
        // exact knot hits return the knot verbatim
        if t == self.knots.time(i) {
            return Ok(self.knots.angles(i));
        }
        if t == self.knots.time(i + 1) {
            return Ok(self.knots.angles(i + 1));
        }
        let u = (t - self.knots.time(i)) / period;
        let a = self.knots.angles(i);
        let b = self.knots.angles(i + 1);
        Ok([
            a[0] + u * (b[0] - a[0]),
            a[1] + u * (b[1] - a[1]),
            a[2] + u * (b[2] - a[2]),
        ])
    }

    pub fn rotation_at(&self, t: f64) -> Result<Rotation> {
        let a = self.angles_at(t)?;
        Ok(rot_from_euler(a[0], a[1], a[2]))
    }

    /// Audit export: one row per knot, `t,roll_deg,pitch_deg,yaw_deg`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,roll_deg,pitch_deg,yaw_deg")?;
        for n in 0..self.knots.len() {
            let a = self.knots.angles(n);
            writeln!(out, "{},{},{},{}", self.knots.time(n), a[0], a[1], a[2])?;
        }
        Ok(())
    }
}

/// Draw a schedule with angles i.i.d. N(0, sigma_deg) per knot and axis,
/// knots every `period_s` seconds, covering [0, duration_s]. Knot count is
/// ceil(duration/period) + 1. Pure function of its arguments.
pub fn sample_schedule(
    sigma_deg: f64,
    period_s: f64,
    duration_s: f64,
    seed: u64,
) -> Result<RotationSchedule> {
    if !(sigma_deg >= 0.0) {
        return Err(Error::Contract(format!("sigma must be >= 0, got {}", sigma_deg)));
    }
    if !(period_s > 0.0) || !(duration_s > 0.0) {
        return Err(Error::Contract(format!(
            "period and duration must be > 0, got T={} dur={}",
            period_s, duration_s
        )));
    }
    let count = (duration_s / period_s).ceil() as usize + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma_deg)
        .map_err(|e| Error::Contract(format!("bad normal parameters: {}", e)))?;
    let angles = (0..count)
        .map(|_| {
            let r = normal.sample(&mut rng);
            let p = normal.sample(&mut rng);
            let y = normal.sample(&mut rng);
            [r, p, y]
        })
        .collect();
    Ok(RotationSchedule { knots: EulerKnots { sigma_deg, period_s, angles } })
}

/// Uniformly random unit vector, used for fixed-magnitude scenario axes.
pub fn random_unit_axis(seed: u64) -> Vec3 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    loop {
        let v: Vec3 =
            [normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng)];
        let n = norm3(v);
        if n > 1e-6 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Convenience wrapper deriving the schedule seed from (master, tag, index)
/// so per-trial schedules never shift when other trials are added.
pub fn sample_schedule_for(
    sigma_deg: f64,
    period_s: f64,
    duration_s: f64,
    master_seed: u64,
    tag: &str,
    index: u64,
) -> Result<RotationSchedule> {
    sample_schedule(sigma_deg, period_s, duration_s, seed::derive(master_seed, tag, index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Independent 3x3 rotation-matrix oracle for intrinsic Z-Y-X.
    fn euler_matrix_oracle(roll: f64, pitch: f64, yaw: f64) -> [[f64; 3]; 3] {
        let (sr, cr) = roll.to_radians().sin_cos();
        let (sp, cp) = pitch.to_radians().sin_cos();
        let (sy, cy) = yaw.to_radians().sin_cos();
        let rz = [[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]];
        let ry = [[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]];
        let rx = [[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]];
        matmul(matmul(rz, ry), rx)
    }

    fn matmul(a: [[f64; 3]; 3], b: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
        let mut c = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    c[i][j] += a[i][k] * b[k][j];
                }
            }
        }
        c
    }

    fn matvec(m: [[f64; 3]; 3], v: Vec3) -> Vec3 {
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    fn assert_close(a: Vec3, b: Vec3, tol: f64) {
        for i in 0..3 {
            assert!((a[i] - b[i]).abs() < tol, "{:?} vs {:?}", a, b);
        }
    }

    #[test]
    fn quarter_turn_about_z() {
        let r = rot_from_euler(0.0, 0.0, 90.0);
        assert_close(r.apply([1.0, 0.0, 0.0]), [0.0, 1.0, 0.0], 1e-9);
    }

    #[test]
    fn zero_angles_are_identity() {
        let r = rot_from_euler(0.0, 0.0, 0.0);
        let v = [0.3, -1.7, 2.2];
        assert_eq!(r.apply(v), v);
        assert_eq!(r, Rotation::IDENTITY);
    }

    #[test]
    fn euler_matches_matrix_oracle() {
        let q = rot_from_euler(10.0, 20.0, 30.0);
        let m = euler_matrix_oracle(10.0, 20.0, 30.0);
        let v = [1.0, 2.0, 3.0];
        assert_close(q.apply(v), matvec(m, v), 1e-9);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let (r, p, y) = (
                rng.gen_range(-180.0..180.0),
                rng.gen_range(-90.0..90.0),
                rng.gen_range(-180.0..180.0),
            );
            let v = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
            assert_close(
                rot_from_euler(r, p, y).apply(v),
                matvec(euler_matrix_oracle(r, p, y), v),
                1e-9,
            );
        }
    }

    #[test]
    fn apply_preserves_zero_and_planar_88() {
        let r = rot_from_euler(0.0, 0.0, 88.0);
        assert_eq!(r.apply([0.0, 0.0, 0.0]), [0.0, 0.0, 0.0]);
        let want = [88.0f64.to_radians().cos(), 88.0f64.to_radians().sin(), 0.0];
        assert_close(r.apply([1.0, 0.0, 0.0]), want, 1e-9);
    }

    #[test]
    fn inverse_roundtrips_random_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let r = rot_from_euler(
                rng.gen_range(-180.0..180.0),
                rng.gen_range(-90.0..90.0),
                rng.gen_range(-180.0..180.0),
            );
            let v = [rng.gen_range(-9.0..9.0), rng.gen_range(-9.0..9.0), rng.gen_range(-9.0..9.0)];
            assert_close(r.apply(r.inverse().apply(v)), v, 1e-9);
        }
    }

    #[test]
    fn norm_and_inner_product_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let r = rot_from_euler(
                rng.gen_range(-180.0..180.0),
                rng.gen_range(-90.0..90.0),
                rng.gen_range(-180.0..180.0),
            );
            assert!((r.norm() - 1.0).abs() < 1e-9);
            let u = [rng.gen_range(-60.0..60.0), rng.gen_range(-60.0..60.0), rng.gen_range(-60.0..60.0)];
            let v = [rng.gen_range(-60.0..60.0), rng.gen_range(-60.0..60.0), rng.gen_range(-60.0..60.0)];
            let (ru, rv) = (r.apply(u), r.apply(v));
            assert!((norm3(ru) - norm3(u)).abs() <= 1e-6 * norm3(u).max(1.0));
            assert!((dot3(ru, rv) - dot3(u, v)).abs() <= 1e-5 * dot3(u, v).abs().max(1.0));
        }
    }

    #[test]
    fn composition_keeps_unit_norm() {
        let mut r = Rotation::IDENTITY;
        for i in 0..1000 {
            r = r.compose(rot_from_euler(13.7 * i as f64, 5.1, -3.3));
            assert!((r.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn schedule_has_ceil_plus_one_knots_and_is_deterministic() {
        let s1 = sample_schedule(20.0, 1.0, 10.0, 99).unwrap();
        assert_eq!(s1.knots.len(), 11);
        let s2 = sample_schedule(20.0, 1.0, 10.0, 99).unwrap();
        assert_eq!(s1, s2);
        let s3 = sample_schedule(20.0, 1.0, 10.5, 99).unwrap();
        assert_eq!(s3.knots.len(), 12);
        let s4 = sample_schedule(20.0, 1.0, 10.0, 100).unwrap();
        assert_ne!(s1, s4);
    }

    #[test]
    fn zero_sigma_schedule_is_identity_everywhere() {
        let s = sample_schedule(0.0, 1.0, 5.0, 3).unwrap();
        for i in 0..=50 {
            let t = i as f64 * 0.1;
            let r = s.rotation_at(t).unwrap();
            let v = [1.0, -2.0, 0.5];
            assert_close(r.apply(v), v, 1e-12);
        }
    }

    #[test]
    fn schedule_angles_match_stated_distribution() {
        let s = sample_schedule(20.0, 1.0, 9999.0, 424242).unwrap();
        assert_eq!(s.knots.len(), 10_000);
        for axis in 0..3 {
            let vals: Vec<f64> = (0..s.knots.len()).map(|n| s.knots.angles(n)[axis]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var =
                vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (vals.len() - 1) as f64;
            let sd = var.sqrt();
            assert!((sd - 20.0).abs() < 1.0, "axis {} sd {}", axis, sd);
        }
    }

    #[test]
    fn negative_sigma_rejected() {
        assert!(sample_schedule(-1.0, 1.0, 5.0, 0).is_err());
        assert!(sample_schedule(5.0, 0.0, 5.0, 0).is_err());
    }

    #[test]
    fn rotation_at_knots_is_exact_and_midpoint_interpolates() {
        let angles = vec![[0.0, 0.0, 0.0], [0.0, 0.0, 10.0], [0.0, 0.0, -4.0]];
        let s = RotationSchedule {
            knots: EulerKnots { sigma_deg: 0.0, period_s: 1.0, angles },
        };
        assert_eq!(s.angles_at(0.0).unwrap(), [0.0, 0.0, 0.0]);
        assert_eq!(s.angles_at(1.0).unwrap(), [0.0, 0.0, 10.0]);
        assert_eq!(s.angles_at(2.0).unwrap(), [0.0, 0.0, -4.0]);
        assert_eq!(s.angles_at(0.5).unwrap(), [0.0, 0.0, 5.0]);
        assert!(s.angles_at(2.1).is_err());
        assert!(s.angles_at(-0.1).is_err());
    }

    #[test]
    fn random_queries_match_piecewise_linear_oracle() {
        let s = sample_schedule(25.0, 0.7, 30.0, 314).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let last = s.duration();
        for _ in 0..1000 {
            let t = rng.gen_range(0.0..last);
            let got = s.angles_at(t).unwrap();
            // independent oracle: scan for the bracketing pair
            let mut n = 0;
            while s.knots.time(n + 1) < t && n + 2 < s.knots.len() {
                n += 1;
            }
            let (t0, t1) = (s.knots.time(n), s.knots.time(n + 1));
            let (a, b) = (s.knots.angles(n), s.knots.angles(n + 1));
            let u = (t - t0) / (t1 - t0);
            for axis in 0..3 {
                let want = a[axis] * (1.0 - u) + b[axis] * u;
                assert!((got[axis] - want).abs() < 1e-9, "t={} axis={}", t, axis);
            }
        }
    }

    #[test]
    fn interpolation_is_affine_between_knots() {
        // power-of-two offsets make the affine identity exact in f64
        let angles = vec![[1.0, -3.0, 7.0], [2.5, 4.5, -1.0]];
        let s = RotationSchedule {
            knots: EulerKnots { sigma_deg: 0.0, period_s: 1.0, angles },
        };
        let slope = [1.5, 7.5, -8.0];
        for k in 1..8 {
            let t = k as f64 * 0.125;
            let a = s.angles_at(t).unwrap();
            let b = s.angles_at(t - 0.125).unwrap();
            for axis in 0..3 {
                assert_eq!(a[axis] - b[axis], 0.125 * slope[axis]);
            }
        }
    }

    #[test]
    fn csv_export_has_one_row_per_knot() {
        let s = sample_schedule(5.0, 1.0, 3.0, 8).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,roll_deg,pitch_deg,yaw_deg");
        assert_eq!(lines.len(), 1 + s.knots.len());
    }

    #[test]
    fn random_axes_are_unit_and_seed_stable() {
        for seed in 0..20 {
            let a = random_unit_axis(seed);
            assert!((norm3(a) - 1.0).abs() < 1e-12);
            assert_eq!(a, random_unit_axis(seed));
        }
        assert_ne!(random_unit_axis(1), random_unit_axis(2));
    }
}
