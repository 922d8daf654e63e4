//! Evaluation: mean absolute error, per-building reports, sigma sweeps,
//! threshold-angle extraction, and CSV/SVG report emission.

use crate::error::{Error, Result};
use crate::features::{make_windows, standardize, Mode};
use crate::magnet::{Model, Variant};
use crate::perturb::{apply_scenario, scenario_catalog, strip_audits, KindSpec, Scenario};
use crate::trainer::{fit_pipeline, Pipeline};
use crate::data::Trial;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

/// How |y - y_hat| is read: Euclidean distance per window (default), or the
/// mean of the per-coordinate absolute errors.
#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Euclidean,
    PerCoordinate,
}

/// Mean over windows of the chosen per-window error.
pub fn mae_with(
    predictions: &[[f64; 2]],
    truths: &[[f64; 2]],
    metric: Metric,
) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != truths.len() {
        return Err(Error::Contract(format!(
            "mae needs equal nonempty lengths, got {} predictions and {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    let mut acc = 0.0;
    for (p, t) in predictions.iter().zip(truths) {
        let (dx, dy) = (p[0] - t[0], p[1] - t[1]);
        acc += match metric {
            Metric::Euclidean => (dx * dx + dy * dy).sqrt(),
            Metric::PerCoordinate => (dx.abs() + dy.abs()) / 2.0,
        };
    }
    Ok(acc / predictions.len() as f64)
}

/// Mean Euclidean distance between predicted and true (x, y), in meters.
pub fn mae(predictions: &[[f64; 2]], truths: &[[f64; 2]]) -> Result<f64> {
    mae_with(predictions, truths, Metric::Euclidean)
}

/// One evaluation outcome for (building, mode, scenario).
#[derive(Serialize, Deserialize, Clone, Debug)]
pub struct EvalReport {
    pub building: String,
    pub mode: Mode,
    pub scenario: Scenario,
    pub mae_m: f64,
    pub mae_per_coord_m: f64,
    pub window_count: usize,
    pub median_m: f64,
    pub p90_m: f64,
}

/// Nearest-rank quantile of an ascending slice.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = (q * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Apply the scenario to the test trials, extract windows in the model's
/// mode, standardize with the model's stats, and report MAE plus the error
/// distribution summary.
pub fn evaluate(
    model: &Model,
    test_trials: &[Trial],
    scenario: &Scenario,
    pipe: &Pipeline,
) -> Result<EvalReport> {
    let stats = model
        .stats
        .as_ref()
        .ok_or_else(|| Error::Contract("model carries no channel stats; train first".into()))?;
    let mode = stats.mode;
    if mode.channels() != model.config.input_channels {
        return Err(Error::Contract(format!(
            "stats mode {} has {} channels but the model takes {}",
            mode,
            mode.channels(),
            model.config.input_channels
        )));
    }
    let (_, perturbed, _) = apply_scenario(&[], test_trials, scenario)?;
    let mut windows = Vec::new();
    for p in &perturbed {
        let (mut w, _) = make_windows(&p.trial, mode, pipe.window, pipe.eval_stride, pipe.gravity_alpha)?;
        windows.append(&mut w);
    }
    if windows.is_empty() {
        return Err(Error::Data("no test windows".into()));
    }
    standardize(&mut windows, stats)?;
    let mut predictions = Vec::with_capacity(windows.len());
    let mut truths = Vec::with_capacity(windows.len());
    for w in &windows {
        let p = model.forward(&w.data)?;
        predictions.push([p[0] as f64, p[1] as f64]);
        truths.push(w.target);
    }
    let mut dists: Vec<f64> = predictions
        .iter()
        .zip(&truths)
        .map(|(p, t)| ((p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2)).sqrt())
        .collect();
    dists.sort_by(|a, b| a.total_cmp(b));
    let building = test_trials.first().map(|t| t.building.clone()).unwrap_or_default();
    Ok(EvalReport {
        building,
        mode,
        scenario: scenario.clone(),
        mae_m: mae(&predictions, &truths)?,
        mae_per_coord_m: mae_with(&predictions, &truths, Metric::PerCoordinate)?,
        window_count: windows.len(),
        median_m: quantile(&dists, 0.5),
        p90_m: quantile(&dists, 0.9),
    })
}

/// One curve of a sweep: MAE per grid point, None where that point failed.
#[derive(Serialize, Deserialize, Clone, Debug)]
pub struct SweepSeries {
    pub name: String,
    pub mode: Mode,
    pub variant: Variant,
    pub mae_m: Vec<Option<f64>>,
    /// True when the series was evaluated once and copied across the grid,
    /// leaning on feature invariance instead of per-point evaluation.
    pub invariant_replicated: bool,
}

#[derive(Serialize, Deserialize, Clone, Debug)]
pub struct SweepResult {
    pub building: String,
    pub kind: KindSpec,
    pub sigma_grid: Vec<f64>,
    pub series: Vec<SweepSeries>,
    pub warnings: Vec<String>,
}

/// What to sweep: magnitudes, the scenario kind, and which network inputs
/// and sizes to compare.
#[derive(Serialize, Deserialize, Clone, Debug)]
pub struct SweepPlan {
    pub sigmas: Vec<f64>,
    pub kind: KindSpec,
    pub modes: Vec<Mode>,
    pub variants: Vec<Variant>,
    pub master_seed: u64,
    /// Evaluate inv2d once and replicate across the grid (flagged on the
    /// series). Off by default so flatness is measured, not assumed.
    pub replicate_invariant: bool,
}

fn series_name(mode: Mode, variant: Variant) -> String {
    let m = match mode {
        Mode::Raw3d => "3d",
        Mode::Inv2d => "2d",
    };
    format!("{}_{}", m, variant)
}

fn kind_touches_train(kind: &KindSpec) -> bool {
    matches!(kind, KindSpec::FixedMagnitudeBoth | KindSpec::RandomBoth { .. })
}

/// Run the sweep: for test-only scenario kinds each (mode, variant) trains
/// once on unperturbed data and is evaluated at every grid point; kinds that
/// perturb the training split retrain at every point. A failed point is
/// recorded as None and the sweep continues.
pub fn sweep(
    plan: &SweepPlan,
    pipe: &Pipeline,
    train_trials: &[Trial],
    val_trials: &[Trial],
    test_trials: &[Trial],
) -> Result<SweepResult> {
    if plan.sigmas.is_empty() {
        return Err(Error::Contract("sweep needs a nonempty sigma grid".into()));
    }
    if plan.sigmas.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::Contract(format!(
            "sigma grid must be strictly ascending, got {:?}",
            plan.sigmas
        )));
    }
    let scenarios = scenario_catalog(&plan.sigmas, &[plan.kind.clone()], plan.master_seed)?;
    let retrain = kind_touches_train(&plan.kind);
    let building = test_trials.first().map(|t| t.building.clone()).unwrap_or_default();
    let mut series = Vec::new();
    let mut warnings = Vec::new();
    for &variant in &plan.variants {
        for &mode in &plan.modes {
            let name = series_name(mode, variant);
            let mut points: Vec<Option<f64>> = Vec::with_capacity(scenarios.len());
            let mut replicated = false;
            if retrain {
                for scenario in &scenarios {
                    let point = (|| -> Result<f64> {
                        let (train_p, _, _) = apply_scenario(train_trials, &[], scenario)?;
                        let (val_p, _, _) = apply_scenario(val_trials, &[], scenario)?;
                        let (model, _, _) = fit_pipeline(
                            pipe,
                            variant,
                            mode,
                            &strip_audits(train_p),
                            &strip_audits(val_p),
                        )?;
                        Ok(evaluate(&model, test_trials, scenario, pipe)?.mae_m)
                    })();
                    match point {
                        Ok(v) => points.push(Some(v)),
                        Err(e) => {
                            warnings.push(format!(
                                "{}: point sigma={} failed: {}",
                                name,
                                scenario.magnitude_deg(),
                                e
                            ));
                            points.push(None);
                        }
                    }
                }
            } else {
                let fitted = fit_pipeline(pipe, variant, mode, train_trials, val_trials);
                match fitted {
                    Ok((model, _, _)) => {
                        if plan.replicate_invariant && mode == Mode::Inv2d {
                            replicated = true;
                            let first = evaluate(&model, test_trials, &scenarios[0], pipe)
                                .map(|r| r.mae_m);
                            match first {
                                Ok(v) => points = vec![Some(v); scenarios.len()],
                                Err(e) => {
                                    warnings.push(format!("{}: {}", name, e));
                                    points = vec![None; scenarios.len()];
                                }
                            }
                        } else {
                            for scenario in &scenarios {
                                match evaluate(&model, test_trials, scenario, pipe) {
                                    Ok(r) => points.push(Some(r.mae_m)),
                                    Err(e) => {
                                        warnings.push(format!(
                                            "{}: point sigma={} failed: {}",
                                            name,
                                            scenario.magnitude_deg(),
                                            e
                                        ));
                                        points.push(None);
                                    }
                                }
                            }
                        }
                    }
                    Err(e) => {
                        warnings.push(format!("{}: training failed: {}", name, e));
                        points = vec![None; scenarios.len()];
                    }
                }
            }
            series.push(SweepSeries {
                name,
                mode,
                variant,
                mae_m: points,
                invariant_replicated: replicated,
            });
        }
    }
    Ok(SweepResult { building, kind: plan.kind.clone(), sigma_grid: plan.sigmas.clone(), series, warnings })
}

/// Threshold angle where the invariant input overtakes the raw input.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct ThresholdResult {
    pub building: String,
    /// None means no threshold at or below the grid maximum.
    pub threshold_deg: Option<f64>,
    pub mae3d_m: f64,
    pub mae2d_m: f64,
}

/// Smallest sigma where MAE_2D <= MAE_3D. Holds at the grid start ->
/// threshold 0; otherwise linear interpolation at the sign change of
/// (MAE_3D - MAE_2D); no crossing -> None with the grid-end values.
pub fn find_threshold(
    sigma_grid: &[f64],
    mae3d: &[f64],
    mae2d: &[f64],
    building: &str,
) -> Result<ThresholdResult> {
    if sigma_grid.is_empty() || sigma_grid.len() != mae3d.len() || sigma_grid.len() != mae2d.len() {
        return Err(Error::Contract(format!(
            "threshold needs aligned series, got grid {}, 3d {}, 2d {}",
            sigma_grid.len(),
            mae3d.len(),
            mae2d.len()
        )));
    }
    let d = |i: usize| mae3d[i] - mae2d[i];
    if d(0) >= 0.0 {
        return Ok(ThresholdResult {
            building: building.into(),
            threshold_deg: Some(sigma_grid[0]),
            mae3d_m: mae3d[0],
            mae2d_m: mae2d[0],
        });
    }
    for i in 1..sigma_grid.len() {
        if d(i) >= 0.0 {
            // linear interpolation of the difference between grid points
            let (s0, s1) = (sigma_grid[i - 1], sigma_grid[i]);
            let (d0, d1) = (d(i - 1), d(i));
            let u = -d0 / (d1 - d0);
            let sigma = s0 + u * (s1 - s0);
            let lerp = |a: f64, b: f64| a + u * (b - a);
            return Ok(ThresholdResult {
                building: building.into(),
                threshold_deg: Some(sigma),
                mae3d_m: lerp(mae3d[i - 1], mae3d[i]),
                mae2d_m: lerp(mae2d[i - 1], mae2d[i]),
            });
        }
    }
    let last = sigma_grid.len() - 1;
    Ok(ThresholdResult {
        building: building.into(),
        threshold_deg: None,
        mae3d_m: mae3d[last],
        mae2d_m: mae2d[last],
    })
}

/// Decimal with at least six significant digits; parses back to the value
/// that was written (values are rounded once, at serialization).
pub fn fmt_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{}", x);
    }
    let mag = x.abs().log10().floor() as i32;
    let decimals = (5 - mag).max(0) as usize;
    format!("{:.*}", decimals, x)
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Static line chart: one polyline per series, axis labels, a legend entry
/// per series name. No scripting, no external references.
pub fn render_sweep_svg(sweep: &SweepResult) -> String {
    let (width, height) = (800.0, 500.0);
    let (left, right, top, bottom) = (70.0, 20.0, 40.0, 60.0);
    let plot_w = width - left - right;
    let plot_h = height - top - bottom;
    let xs = &sweep.sigma_grid;
    let x_min = *xs.first().unwrap_or(&0.0);
    let x_max = *xs.last().unwrap_or(&1.0);
    let x_span = (x_max - x_min).max(1e-12);
    let mut y_max = 0.0f64;
    for s in &sweep.series {
        for v in s.mae_m.iter().flatten() {
            y_max = y_max.max(*v);
        }
    }
    if y_max <= 0.0 {
        y_max = 1.0;
    }
    y_max *= 1.05;
    let sx = |x: f64| left + (x - x_min) / x_span * plot_w;
    let sy = |y: f64| top + plot_h - (y / y_max) * plot_h;
    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {} {}\" font-family=\"sans-serif\" font-size=\"13\">\n",
        width, height
    );
    let _ = write!(svg, "<rect width=\"{}\" height=\"{}\" fill=\"white\"/>\n", width, height);
    let title = format!("{}: {} sweep", sweep.building, kind_label(&sweep.kind));
    let _ = write!(
        svg,
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{}</text>\n",
        width / 2.0,
        title
    );
    // axes
    let _ = write!(
        svg,
        "<line x1=\"{l}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n<line x1=\"{l}\" y1=\"{t}\" x2=\"{l}\" y2=\"{b}\" stroke=\"black\"/>\n",
        l = left,
        r = left + plot_w,
        t = top,
        b = top + plot_h
    );
    // x ticks: grid values (thinned to at most 11 labels)
    let step = (xs.len() / 11).max(1);
    for (i, &x) in xs.iter().enumerate() {
        if i % step != 0 && i != xs.len() - 1 {
            continue;
        }
        let px = sx(x);
        let _ = write!(
            svg,
            "<line x1=\"{px}\" y1=\"{b}\" x2=\"{px}\" y2=\"{b2}\" stroke=\"black\"/>\n<text x=\"{px}\" y=\"{ty}\" text-anchor=\"middle\">{}</text>\n",
            fmt_sig6(x),
            px = px,
            b = top + plot_h,
            b2 = top + plot_h + 5.0,
            ty = top + plot_h + 20.0
        );
    }
    // y ticks: 5 even divisions
    for k in 0..=5 {
        let y = y_max * k as f64 / 5.0;
        let py = sy(y);
        let _ = write!(
            svg,
            "<line x1=\"{l2}\" y1=\"{py}\" x2=\"{l}\" y2=\"{py}\" stroke=\"black\"/>\n<text x=\"{tx}\" y=\"{tyy}\" text-anchor=\"end\">{}</text>\n",
            fmt_sig6((y * 100.0).round() / 100.0),
            l = left,
            l2 = left - 5.0,
            py = py,
            tx = left - 8.0,
            tyy = py + 4.0
        );
    }
    let _ = write!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">sigma (deg)</text>\n",
        left + plot_w / 2.0,
        height - 15.0
    );
    let _ = write!(
        svg,
        "<text x=\"18\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">MAE (m)</text>\n",
        top + plot_h / 2.0,
        top + plot_h / 2.0
    );
    // series
    for (si, s) in sweep.series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let mut points = String::new();
        for (i, v) in s.mae_m.iter().enumerate() {
            if let Some(y) = v {
                let _ = write!(points, "{},{} ", sx(xs[i]), sy(*y));
            }
        }
        let _ = write!(
            svg,
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"2\" points=\"{}\"/>\n",
            color,
            points.trim_end()
        );
        // legend entry
        let ly = top + 10.0 + si as f64 * 18.0;
        let _ = write!(
            svg,
            "<rect x=\"{x}\" y=\"{y}\" width=\"12\" height=\"12\" fill=\"{c}\"/>\n<text x=\"{tx}\" y=\"{ty}\">{name}</text>\n",
            x = left + plot_w - 120.0,
            y = ly - 10.0,
            c = color,
            tx = left + plot_w - 102.0,
            ty = ly,
            name = s.name
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn kind_label(kind: &KindSpec) -> String {
    match kind {
        KindSpec::FixedTest { axes } => {
            let ax: String = axes.iter().map(|a| a.letter()).collect();
            format!("fixed_test_{}", ax)
        }
        KindSpec::FixedMagnitudeBoth => "fixed_both".into(),
        KindSpec::RandomTest { .. } => "random_test".into(),
        KindSpec::RandomBoth { .. } => "random_both".into(),
    }
}

/// CSV for one sweep: sigma column plus one column per series.
pub fn sweep_csv(sweep: &SweepResult) -> String {
    let mut out = String::from("sigma_deg");
    for s in &sweep.series {
        out.push(',');
        out.push_str(&s.name);
    }
    out.push('\n');
    for (i, &sigma) in sweep.sigma_grid.iter().enumerate() {
        out.push_str(&fmt_sig6(sigma));
        for s in &sweep.series {
            out.push(',');
            match s.mae_m[i] {
                Some(v) => out.push_str(&fmt_sig6(v)),
                None => out.push_str("failed"),
            }
        }
        out.push('\n');
    }
    out
}

/// CSV of threshold rows, mirroring the reference table layout.
pub fn thresholds_csv(rows: &[ThresholdResult]) -> String {
    let mut out = String::from("building,threshold_deg,mae3d_m,mae2d_m\n");
    for r in rows {
        let t = match r.threshold_deg {
            Some(v) => fmt_sig6(v),
            None => "none".into(),
        };
        let _ = writeln!(out, "{},{},{},{}", r.building, t, fmt_sig6(r.mae3d_m), fmt_sig6(r.mae2d_m));
    }
    out
}

/// Write sweep CSVs, sweep SVGs, and the thresholds CSV into `out_dir`.
/// Returns every path written.
pub fn emit_report(
    sweeps: &[SweepResult],
    thresholds: &[ThresholdResult],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    if sweeps.is_empty() && thresholds.is_empty() {
        return Err(Error::Contract("emit_report needs at least one result".into()));
    }
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for sweep in sweeps {
        let stem = format!("{}_{}_sweep", sweep.building, kind_label(&sweep.kind));
        let csv_path = out_dir.join(format!("{}.csv", stem));
        fs::write(&csv_path, sweep_csv(sweep))?;
        written.push(csv_path);
        let svg_path = out_dir.join(format!("{}.svg", stem));
        fs::write(&svg_path, render_sweep_svg(sweep))?;
        written.push(svg_path);
    }
    if !thresholds.is_empty() {
        let path = out_dir.join("thresholds.csv");
        fs::write(&path, thresholds_csv(thresholds))?;
        written.push(path);
    }
    Ok(written)
}

/// Per-evaluation CSV named {building}_{scenario}_{mode}.csv.
pub fn write_eval_report(report: &EvalReport, out_dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(out_dir)?;
    let name = format!("{}_{}_{}.csv", report.building, report.scenario.label(), report.mode);
    let path = out_dir.join(name);
    let mut out =
        String::from("building,scenario,mode,mae_m,mae_per_coord_m,window_count,median_m,p90_m\n");
    let _ = writeln!(
        out,
        "{},{},{},{},{},{},{},{}",
        report.building,
        report.scenario.label(),
        report.mode,
        fmt_sig6(report.mae_m),
        fmt_sig6(report.mae_per_coord_m),
        report.window_count,
        fmt_sig6(report.median_m),
        fmt_sig6(report.p90_m)
    );
    fs::write(&path, out)?;
    Ok(path)
}
