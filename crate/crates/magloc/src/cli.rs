//! Batch entry point: subcommands over a JSON run configuration, frozen
//! resolved configs, and a digest manifest of every emitted file.

use crate::data::ingest::{ingest_magpie, ColumnMap};
use crate::data::resample::resample_align;
use crate::data::synth::{synth_generate, SynthConfig};
use crate::data::{
    default_exclusions, exclude_trials, read_normalized, write_normalized, BuildingSet, Trial,
    TARGET_RATE_HZ,
};
use crate::error::{Error, Result};
use crate::evalkit::{
    emit_report, evaluate, find_threshold, sweep, write_eval_report, SweepPlan, SweepResult,
    ThresholdResult,
};
use crate::features::Mode;
use crate::magnet::{load_model, save_model, Variant};
use crate::perturb::{KindSpec, Scenario, ScenarioKind};
use crate::trainer::{fit_pipeline, split, Pipeline, SplitSpec};
use clap::error::ErrorKind as ClapErrorKind;
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

/// Where trials come from.
#[derive(Serialize, Deserialize, Clone, Debug)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Source {
    /// Raw MagPie building directory (directory name = building id).
    Magpie {
        root: PathBuf,
        #[serde(default)]
        columns: ColumnMap,
    },
    /// Simulated building.
    Synth(SynthConfig),
    /// A directory produced by `ingest` or `synth` (holds set.json).
    Normalized { dir: PathBuf },
}

/// One experiment, fully described. The resolved form (after flag
/// overrides) is frozen into the output directory on every run.
#[derive(Serialize, Deserialize, Clone, Debug)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub source: Source,
    /// Building the run must see; mismatch is a data error.
    pub building: Option<String>,
    pub mode: Mode,
    pub variant: Variant,
    /// Evaluation perturbation; None evaluates unperturbed.
    pub scenario: Option<Scenario>,
    pub split: SplitSpec,
    pub pipeline: Pipeline,
    pub sigma_grid: Vec<f64>,
    pub sweep_kinds: Vec<KindSpec>,
    pub sweep_modes: Vec<Mode>,
    pub sweep_variants: Vec<Variant>,
    pub replicate_invariant: bool,
    /// (building, trial_id) pairs dropped before any split.
    pub exclusions: Vec<(String, String)>,
    pub out_dir: PathBuf,
    pub master_seed: u64,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            source: Source::Synth(SynthConfig::default()),
            building: None,
            mode: Mode::Raw3d,
            variant: Variant::S,
            scenario: None,
            split: SplitSpec::default(),
            pipeline: Pipeline::default(),
            sigma_grid: (0..=10).map(|k| 2.0 * k as f64).collect(),
            sweep_kinds: vec![KindSpec::RandomTest { period_s: 2.0 }],
            sweep_modes: vec![Mode::Raw3d, Mode::Inv2d],
            sweep_variants: vec![Variant::S],
            replicate_invariant: false,
            exclusions: default_exclusions(),
            out_dir: PathBuf::from("out"),
            master_seed: 7,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "magloc", version, about = "Magnetic indoor localization experiment runner")]
pub struct Cli {
    /// JSON run configuration; flags below override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// raw3d | inv2d
    #[arg(long, global = true)]
    pub mode: Option<String>,
    /// s | xl
    #[arg(long, global = true)]
    pub variant: Option<String>,
    #[arg(long, global = true)]
    pub building: Option<String>,
    #[arg(long, global = true)]
    pub master_seed: Option<u64>,
    #[arg(long, global = true)]
    pub learning_rate: Option<f64>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub max_epochs: Option<usize>,
    #[arg(long, global = true)]
    pub patience: Option<usize>,
    #[arg(long, global = true)]
    pub window: Option<usize>,
    /// Comma-separated ascending grid, e.g. 0,2,4,8.
    #[arg(long, global = true)]
    pub sigma_grid: Option<String>,
    /// Inline JSON scenario, e.g. {"kind":"fixed_test","axes":["z"],"angle_deg":88,"seed":1}.
    #[arg(long, global = true)]
    pub scenario: Option<String>,
    /// Model checkpoint for eval; defaults to <out_dir>/model.ckpt.
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// MagPie building directory; switches the source to magpie.
    #[arg(long, global = true)]
    pub magpie_root: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Clone, Copy, Debug)]
pub enum Command {
    /// Normalize a raw dataset into per-trial CSVs plus set.json.
    Ingest,
    /// Generate a synthetic building and write it in normalized form.
    Synth,
    /// Train one model and write checkpoint plus run log.
    Train,
    /// Evaluate a checkpoint on the test split under the configured scenario.
    Eval,
    /// Sweep sigma grids across modes/variants/kinds; writes CSV, SVG, thresholds.
    Sweep,
    /// Regenerate CSV/SVG artifacts from stored sweep results.
    Report,
    /// Dataset diagnostics: rates, lengths, flags, bounding box.
    Inspect,
}

fn one_line(s: &str) -> String {
    s.replace('\n', "; ").replace('\r', "")
}

/// Entry point for the binary: parse, dispatch, map errors to exit codes,
/// and keep the diagnostic stream one-line machine-parsable.
pub fn main_entry(argv: Vec<String>) -> i32 {
    match run_cli(&argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: kind={} code={} msg=\"{}\"", e.kind_tag(), e.exit_code(), one_line(&e.to_string()));
            e.exit_code() as i32
        }
    }
}

pub fn run_cli(argv: &[String]) -> Result<()> {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ClapErrorKind::DisplayHelp | ClapErrorKind::DisplayVersion) => {
            print!("{}", e);
            return Ok(());
        }
        Err(e) => return Err(Error::Config(one_line(&e.to_string()))),
    };
    let config = resolve_config(&cli)?;
    dispatch(cli.command, &config, cli.checkpoint.as_deref())
}

fn parse_mode(s: &str) -> Result<Mode> {
    match s {
        "raw3d" => Ok(Mode::Raw3d),
        "inv2d" => Ok(Mode::Inv2d),
        other => Err(Error::Config(format!("unknown mode '{}', expected raw3d or inv2d", other))),
    }
}

fn parse_variant(s: &str) -> Result<Variant> {
    match s {
        "s" | "S" => Ok(Variant::S),
        "xl" | "XL" => Ok(Variant::Xl),
        other => Err(Error::Config(format!("unknown variant '{}', expected s or xl", other))),
    }
}

fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let grid: Vec<f64> = s
        .split(',')
        .map(|tok| {
            tok.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("sigma grid entry '{}' is not a number", tok)))
        })
        .collect::<Result<_>>()?;
    if grid.is_empty() || grid.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::Config(format!("sigma grid must be nonempty ascending, got '{}'", s)));
    }
    Ok(grid)
}

/// Config file first, then flag overrides; the result is what gets frozen.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {}", path.display(), e)))?;
            serde_json::from_str::<RunConfig>(&text)
                .map_err(|e| Error::Config(format!("{}: {}", path.display(), e)))?
        }
        None => RunConfig::default(),
    };
    if let Some(dir) = &cli.out_dir {
        config.out_dir = dir.clone();
    }
    if let Some(m) = &cli.mode {
        config.mode = parse_mode(m)?;
    }
    if let Some(v) = &cli.variant {
        config.variant = parse_variant(v)?;
    }
    if let Some(b) = &cli.building {
        config.building = Some(b.clone());
    }
    if let Some(s) = cli.master_seed {
        config.master_seed = s;
    }
    if let Some(lr) = cli.learning_rate {
        config.pipeline.train.learning_rate = lr;
    }
    if let Some(b) = cli.batch_size {
        config.pipeline.train.batch_size = b;
    }
    if let Some(e) = cli.max_epochs {
        config.pipeline.train.max_epochs = e;
    }
    if let Some(p) = cli.patience {
        config.pipeline.train.patience = p;
    }
    if let Some(w) = cli.window {
        config.pipeline.window = w;
    }
    if let Some(g) = &cli.sigma_grid {
        config.sigma_grid = parse_grid(g)?;
    }
    if let Some(s) = &cli.scenario {
        let scenario: Scenario = serde_json::from_str(s)
            .map_err(|e| Error::Config(format!("--scenario: {}", e)))?;
        scenario.validate()?;
        config.scenario = Some(scenario);
    }
    if let Some(root) = &cli.magpie_root {
        let columns = match &config.source {
            Source::Magpie { columns, .. } => columns.clone(),
            _ => ColumnMap::default(),
        };
        config.source = Source::Magpie { root: root.clone(), columns };
    }
    config.pipeline.train.validate()?;
    Ok(config)
}

/// The unperturbed scenario: a zero-magnitude schedule is a bit-exact
/// passthrough of the trials.
fn identity_scenario() -> Scenario {
    Scenario { kind: ScenarioKind::RandomTest { sigma_deg: 0.0, period_s: 1.0 }, seed: 0 }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{:02x}", b)).collect()
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Digest every file under the run directory (the manifest itself excluded),
/// sorted by path for stable output.
pub fn write_manifest(out_dir: &Path) -> Result<PathBuf> {
    let mut entries = Vec::new();
    let mut stack = vec![out_dir.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().map(|n| n != "manifest.json").unwrap_or(true) {
                let data = fs::read(&path)?;
                let rel = path
                    .strip_prefix(out_dir)
                    .map_err(|_| Error::Io(std::io::Error::other("path outside out_dir")))?;
                entries.push(ManifestEntry {
                    path: rel.to_string_lossy().replace('\\', "/"),
                    bytes: data.len() as u64,
                    sha256: sha256_hex(&data),
                });
            }
        }
    }
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    let path = out_dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&entries)?)?;
    Ok(path)
}

fn freeze_config(config: &RunConfig) -> Result<()> {
    fs::create_dir_all(&config.out_dir)?;
    let path = config.out_dir.join("config.frozen.json");
    fs::write(path, serde_json::to_string_pretty(config)?)?;
    Ok(())
}

/// Load trials from any source, resampled onto the target grid, with the
/// configured exclusions applied when `apply_exclusions` is set.
pub fn load_dataset(config: &RunConfig, apply_exclusions: bool) -> Result<(BuildingSet, Vec<String>)> {
    let (mut set, mut warnings) = match &config.source {
        Source::Magpie { root, columns } => {
            let (set, warnings) = ingest_magpie(root, columns)?;
            let trials: Vec<Trial> = set
                .trials
                .iter()
                .map(|t| resample_align(t, TARGET_RATE_HZ))
                .collect::<Result<_>>()?;
            (BuildingSet { trials, ..set }, warnings)
        }
        Source::Synth(sc) => {
            sc.validate()?;
            (synth_generate(sc)?, Vec::new())
        }
        Source::Normalized { dir } => (read_normalized(dir)?, Vec::new()),
    };
    if let Some(filter) = &config.building {
        if &set.building != filter {
            return Err(Error::Data(format!(
                "building filter '{}' does not match dataset building '{}'",
                filter, set.building
            )));
        }
    }
    if apply_exclusions {
        let (filtered, mut w) = exclude_trials(set, &config.exclusions);
        set = filtered;
        warnings.append(&mut w);
    }
    if set.trials.is_empty() {
        return Err(Error::Data(format!("building {} has no usable trials", set.building)));
    }
    Ok((set, warnings))
}

fn dispatch(command: Command, config: &RunConfig, checkpoint: Option<&Path>) -> Result<()> {
    freeze_config(config)?;
    match command {
        Command::Ingest => cmd_ingest(config),
        Command::Synth => cmd_synth(config),
        Command::Train => cmd_train(config),
        Command::Eval => cmd_eval(config, checkpoint),
        Command::Sweep => cmd_sweep(config),
        Command::Report => cmd_report(config),
        Command::Inspect => cmd_inspect(config),
    }?;
    write_manifest(&config.out_dir)?;
    Ok(())
}

#[derive(Serialize, Deserialize, Clone, Debug)]
struct DatasetSummary {
    building: String,
    size_class: String,
    trials: usize,
    records_total: usize,
    bbox_min: [f64; 3],
    bbox_max: [f64; 3],
    diagonal_xy_m: f64,
    warnings: Vec<String>,
}

fn summarize(set: &BuildingSet, warnings: &[String]) -> DatasetSummary {
    DatasetSummary {
        building: set.building.clone(),
        size_class: set.size_class.clone(),
        trials: set.trials.len(),
        records_total: set.trials.iter().map(|t| t.records.len()).sum(),
        bbox_min: set.bbox_min,
        bbox_max: set.bbox_max,
        diagonal_xy_m: set.diagonal_xy(),
        warnings: warnings.to_vec(),
    }
}

fn write_normalized_with_summary(set: &BuildingSet, warnings: &[String], config: &RunConfig) -> Result<()> {
    let dir = config.out_dir.join("normalized").join(&set.building);
    write_normalized(set, &dir)?;
    let summary = summarize(set, warnings);
    fs::write(
        config.out_dir.join("dataset_summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    println!(
        "{}: {} trials, {} records, diagonal {:.2} m -> {}",
        set.building,
        set.trials.len(),
        summary.records_total,
        summary.diagonal_xy_m,
        dir.display()
    );
    Ok(())
}

fn cmd_ingest(config: &RunConfig) -> Result<()> {
    if !matches!(config.source, Source::Magpie { .. }) {
        return Err(Error::Config(
            "ingest needs a magpie source; set source.type=magpie or pass --magpie-root".into(),
        ));
    }
    let (set, warnings) = load_dataset(config, false)?;
    write_normalized_with_summary(&set, &warnings, config)
}

fn cmd_synth(config: &RunConfig) -> Result<()> {
    let Source::Synth(sc) = &config.source else {
        return Err(Error::Config("synth needs source.type=synth".into()));
    };
    sc.validate()?;
    let set = synth_generate(sc)?;
    write_normalized_with_summary(&set, &[], config)
}

fn cmd_train(config: &RunConfig) -> Result<()> {
    let (set, _) = load_dataset(config, true)?;
    let (train_trials, val_trials, _) = split(&set.trials, &config.split)?;
    let (model, log, _) =
        fit_pipeline(&config.pipeline, config.variant, config.mode, &train_trials, &val_trials)?;
    let ckpt = config.out_dir.join("model.ckpt");
    save_model(&model, &ckpt)?;
    log.write_jsonl(&config.out_dir.join("epochs.jsonl"))?;
    log.write_summary(&config.out_dir.join("run.json"))?;
    println!(
        "trained {} {} on {}: best val MAE {:.4} m at epoch {} ({} epochs run) -> {}",
        config.mode,
        config.variant,
        set.building,
        log.best_val_mae,
        log.best_epoch,
        log.epochs.len(),
        ckpt.display()
    );
    Ok(())
}

fn cmd_eval(config: &RunConfig, checkpoint: Option<&Path>) -> Result<()> {
    let (set, _) = load_dataset(config, true)?;
    let (_, _, test_trials) = split(&set.trials, &config.split)?;
    let ckpt = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.out_dir.join("model.ckpt"));
    let model = load_model(&ckpt)?;
    let scenario = config.scenario.clone().unwrap_or_else(identity_scenario);
    let report = evaluate(&model, &test_trials, &scenario, &config.pipeline)?;
    fs::write(
        config.out_dir.join("eval_report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    let csv = write_eval_report(&report, &config.out_dir)?;
    println!(
        "{} {} under {}: MAE {:.4} m over {} windows (median {:.4}, p90 {:.4}) -> {}",
        report.building,
        report.mode,
        scenario.label(),
        report.mae_m,
        report.window_count,
        report.median_m,
        report.p90_m,
        csv.display()
    );
    Ok(())
}

#[derive(Serialize, Deserialize, Clone, Debug)]
struct StoredSweeps {
    sweeps: Vec<SweepResult>,
    thresholds: Vec<ThresholdResult>,
}

/// Thresholds for every (kind, variant) whose 3d and 2d series are complete.
fn extract_thresholds(sweeps: &[SweepResult], multi: bool) -> Vec<ThresholdResult> {
    let mut out = Vec::new();
    for sw in sweeps {
        let variants: Vec<Variant> = {
            let mut v: Vec<Variant> = sw.series.iter().map(|s| s.variant).collect();
            v.dedup();
            v
        };
        for variant in variants {
            let find = |mode: Mode| {
                sw.series
                    .iter()
                    .find(|s| s.mode == mode && s.variant == variant)
                    .and_then(|s| s.mae_m.iter().map(|p| *p).collect::<Option<Vec<f64>>>())
            };
            let (Some(m3), Some(m2)) = (find(Mode::Raw3d), find(Mode::Inv2d)) else {
                continue;
            };
            let label = if multi {
                format!("{}/{}/{}", sw.building, kind_tag_of(&sw.kind), variant)
            } else {
                sw.building.clone()
            };
            if let Ok(t) = find_threshold(&sw.sigma_grid, &m3, &m2, &label) {
                out.push(t);
            }
        }
    }
    out
}

fn kind_tag_of(kind: &KindSpec) -> &'static str {
    match kind {
        KindSpec::FixedTest { .. } => "fixed_test",
        KindSpec::FixedMagnitudeBoth => "fixed_both",
        KindSpec::RandomTest { .. } => "random_test",
        KindSpec::RandomBoth { .. } => "random_both",
    }
}

fn cmd_sweep(config: &RunConfig) -> Result<()> {
    if config.sweep_kinds.is_empty() {
        return Err(Error::Config("sweep needs at least one kind in sweep_kinds".into()));
    }
    let (set, _) = load_dataset(config, true)?;
    let (train_trials, val_trials, test_trials) = split(&set.trials, &config.split)?;
    let mut sweeps = Vec::new();
    for kind in &config.sweep_kinds {
        let plan = SweepPlan {
            sigmas: config.sigma_grid.clone(),
            kind: kind.clone(),
            modes: config.sweep_modes.clone(),
            variants: config.sweep_variants.clone(),
            master_seed: config.master_seed,
            replicate_invariant: config.replicate_invariant,
        };
        let result = sweep(&plan, &config.pipeline, &train_trials, &val_trials, &test_trials)?;
        for w in &result.warnings {
            eprintln!("warning: {}", w);
        }
        sweeps.push(result);
    }
    let multi = sweeps.len() > 1 || config.sweep_variants.len() > 1;
    let thresholds = extract_thresholds(&sweeps, multi);
    let stored = StoredSweeps { sweeps, thresholds };
    fs::write(
        config.out_dir.join("sweep_results.json"),
        serde_json::to_string_pretty(&stored)?,
    )?;
    let files = emit_report(&stored.sweeps, &stored.thresholds, &config.out_dir)?;
    println!(
        "swept {} kinds x {} points on {}: {} files",
        stored.sweeps.len(),
        config.sigma_grid.len(),
        set.building,
        files.len() + 1
    );
    for t in &stored.thresholds {
        match t.threshold_deg {
            Some(deg) => println!("threshold {}: {:.2} deg", t.building, deg),
            None => println!("threshold {}: none below the grid maximum", t.building),
        }
    }
    Ok(())
}

fn cmd_report(config: &RunConfig) -> Result<()> {
    let path = config.out_dir.join("sweep_results.json");
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Data(format!("no stored sweep at {}: {}", path.display(), e)))?;
    let stored: StoredSweeps = serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("{}: {}", path.display(), e)))?;
    let files = emit_report(&stored.sweeps, &stored.thresholds, &config.out_dir)?;
    println!("regenerated {} files from {}", files.len(), path.display());
    Ok(())
}

#[derive(Serialize, Deserialize, Clone, Debug)]
struct TrialDiag {
    trial_id: String,
    device: String,
    sample_rate_hz: f64,
    rate_flagged: bool,
    records: usize,
    duration_s: f64,
}

fn cmd_inspect(config: &RunConfig) -> Result<()> {
    let (set, warnings) = load_dataset(config, false)?;
    let diags: Vec<TrialDiag> = set
        .trials
        .iter()
        .map(|t| TrialDiag {
            trial_id: t.trial_id.clone(),
            device: t.device.clone(),
            sample_rate_hz: t.sample_rate_hz,
            rate_flagged: t.rate_flagged,
            records: t.records.len(),
            duration_s: t.duration(),
        })
        .collect();
    let summary = summarize(&set, &warnings);
    #[derive(Serialize)]
    struct Inspect<'a> {
        summary: &'a DatasetSummary,
        trials: &'a [TrialDiag],
    }
    fs::write(
        config.out_dir.join("inspect.json"),
        serde_json::to_string_pretty(&Inspect { summary: &summary, trials: &diags })?,
    )?;
    println!(
        "{} ({}): {} trials, bbox [{:.1}, {:.1}] x [{:.1}, {:.1}] m",
        set.building,
        set.size_class,
        diags.len(),
        set.bbox_min[0],
        set.bbox_max[0],
        set.bbox_min[1],
        set.bbox_max[1]
    );
    println!("{:<12} {:>10} {:>8} {:>10} {:>8}", "trial", "rate_hz", "flagged", "records", "dur_s");
    for d in &diags {
        println!(
            "{:<12} {:>10.2} {:>8} {:>10} {:>8.1}",
            d.trial_id, d.sample_rate_hz, d.rate_flagged, d.records, d.duration_s
        );
    }
    for w in &warnings {
        eprintln!("warning: {}", w);
    }
    Ok(())
}
