//! Samples time-varying rotation schedules, shows how knot angles
//! interpolate, and exports one schedule as CSV.

use magloc::error::Result;
use magloc::geometry::sample_schedule;
use std::fs;
use std::path::Path;

fn main() -> Result<()> {
    let sigma_deg = 20.0;
    let period_s = 2.0;
    let duration_s = 30.0;

    println!("schedules with sigma {} deg, knot period {} s:", sigma_deg, period_s);
    for seed in 0..3 {
        let schedule = sample_schedule(sigma_deg, period_s, duration_s, seed)?;
        let mut max_knot = 0.0f64;
        for n in 0..schedule.knots.len() {
            for a in schedule.knots.angles(n) {
                max_knot = max_knot.max(a.abs());
            }
        }
        println!(
            "  seed {}: {} knots over {:.0} s, largest |Euler knot| {:.1} deg",
            seed,
            schedule.knots.len(),
            schedule.duration(),
            max_knot
        );
    }

    let schedule = sample_schedule(sigma_deg, period_s, duration_s, 0)?;
    println!("\ninterpolated Euler angles (deg), seed 0:");
    println!("{:>6} {:>9} {:>9} {:>9}", "t_s", "roll", "pitch", "yaw");
    for k in 0..=6 {
        let t = k as f64 * 0.5;
        let a = schedule.angles_at(t)?;
        println!("{:>6.1} {:>9.3} {:>9.3} {:>9.3}", t, a[0], a[1], a[2]);
    }

    let north = [1.0, 0.0, 0.0];
    let r0 = schedule.rotation_at(1.0)?;
    let moved = r0.apply(north);
    println!("\nunit x at t=1.0 s maps to [{:.4}, {:.4}, {:.4}]", moved[0], moved[1], moved[2]);

    let out = Path::new("example_out");
    fs::create_dir_all(out)?;
    let csv_path = out.join("schedule_seed0.csv");
    schedule.write_csv(fs::File::create(&csv_path)?)?;
    println!("schedule written to {}", csv_path.display());
    Ok(())
}
